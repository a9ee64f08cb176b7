use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{DldaError, Result};

/// Binary implicit-feedback interactions over densely re-indexed users and
/// items. The raw id tables map indices back to the ids seen on ingest.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    interactions: Vec<(usize, usize)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub avg_per_user: f64,
    /// Interactions per item; the "Avg.Int." column of the usual dataset
    /// statistics table.
    pub avg_per_item: f64,
    /// `100 * (1 - |R| / (users * items))`.
    pub sparsity_pct: f64,
}

impl DatasetStats {
    /// One table row: users, items, interactions, avg per item, sparsity.
    pub fn table_line(&self, name: &str) -> String {
        format!(
            "{name} | users {} | items {} | interactions {} | avg.int {:.2} | avg/user {:.2} | sparsity {:.2}%",
            self.users,
            self.items,
            self.interactions,
            self.avg_per_item,
            self.avg_per_user,
            self.sparsity_pct
        )
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LoadOptions {
    /// Drop rows whose rating column is below this value. Rows without a
    /// rating column are always kept.
    pub min_rating: Option<f64>,
}

impl Dataset {
    /// Builds a dataset over `users x items` with index ids `"0"`, `"1"`, ...
    /// Duplicate pairs are collapsed, keeping first occurrence order.
    pub fn from_pairs(users: usize, items: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let user_ids = (0..users).map(|u| u.to_string()).collect();
        let item_ids = (0..items).map(|i| i.to_string()).collect();
        Dataset::with_ids(user_ids, item_ids, pairs)
    }

    pub fn with_ids(
        user_ids: Vec<String>,
        item_ids: Vec<String>,
        pairs: &[(usize, usize)],
    ) -> Result<Self> {
        let (m, n) = (user_ids.len(), item_ids.len());
        let mut seen = std::collections::HashSet::with_capacity(pairs.len());
        let mut interactions = Vec::with_capacity(pairs.len());
        for &(u, i) in pairs {
            if u >= m || i >= n {
                return Err(DldaError::invalid(format!(
                    "interaction ({u}, {i}) outside {m} users x {n} items"
                )));
            }
            if seen.insert((u, i)) {
                interactions.push((u, i));
            }
        }
        Ok(Dataset {
            user_ids,
            item_ids,
            interactions,
        })
    }

    /// Same id tables, different interaction list.
    pub fn with_interactions(&self, pairs: &[(usize, usize)]) -> Result<Self> {
        Dataset::with_ids(self.user_ids.clone(), self.item_ids.clone(), pairs)
    }

    pub fn user_count(&self) -> usize {
        self.user_ids.len()
    }

    pub fn item_count(&self) -> usize {
        self.item_ids.len()
    }

    pub fn interactions(&self) -> &[(usize, usize)] {
        &self.interactions
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn user_ids(&self) -> &[String] {
        &self.user_ids
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    /// Items of each user, sorted ascending.
    pub fn user_items(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.user_count()];
        for &(u, i) in &self.interactions {
            out[u].push(i);
        }
        out.iter_mut().for_each(|v| v.sort_unstable());
        out
    }

    /// Users of each item, sorted ascending.
    pub fn item_users(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.item_count()];
        for &(u, i) in &self.interactions {
            out[i].push(u);
        }
        out.iter_mut().for_each(|v| v.sort_unstable());
        out
    }

    pub fn user_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.user_count()];
        for &(u, _) in &self.interactions {
            deg[u] += 1;
        }
        deg
    }

    pub fn item_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.item_count()];
        for &(_, i) in &self.interactions {
            deg[i] += 1;
        }
        deg
    }

    pub fn stats(&self) -> DatasetStats {
        let (m, n, r) = (self.user_count(), self.item_count(), self.len());
        let cells = (m * n) as f64;
        DatasetStats {
            users: m,
            items: n,
            interactions: r,
            avg_per_user: if m == 0 { 0.0 } else { r as f64 / m as f64 },
            avg_per_item: if n == 0 { 0.0 } else { r as f64 / n as f64 },
            sparsity_pct: if cells == 0.0 {
                100.0
            } else {
                100.0 * (1.0 - r as f64 / cells)
            },
        }
    }

    /// SHA-256 over the dimensions and the sorted index pairs.
    pub fn fingerprint(&self) -> String {
        let mut pairs = self.interactions.clone();
        pairs.sort_unstable();
        let mut h = Sha256::new();
        h.update((self.user_count() as u64).to_le_bytes());
        h.update((self.item_count() as u64).to_le_bytes());
        for (u, i) in pairs {
            h.update((u as u64).to_le_bytes());
            h.update((i as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Reads `user<TAB>item[<TAB>rating[<TAB>timestamp]]` lines. Blank lines
    /// and lines starting with `#` are skipped; every kept row becomes a
    /// binary interaction.
    pub fn load(path: &Path, options: LoadOptions) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| DldaError::io(path, e))?;
        Dataset::parse(&text, options)
    }

    pub fn parse(text: &str, options: LoadOptions) -> Result<Self> {
        let mut user_index: HashMap<String, usize> = HashMap::new();
        let mut item_index: HashMap<String, usize> = HashMap::new();
        let mut user_ids = Vec::new();
        let mut item_ids = Vec::new();
        let mut pairs = Vec::new();

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() < 2 || fields.len() > 4 {
                return Err(DldaError::Parse {
                    line: lineno + 1,
                    message: format!("expected 2 to 4 fields, found {}", fields.len()),
                });
            }
            let rating = match fields.get(2) {
                Some(r) => Some(r.parse::<f64>().map_err(|_| DldaError::Parse {
                    line: lineno + 1,
                    message: format!("rating `{r}` is not a number"),
                })?),
                None => None,
            };
            if let Some(ts) = fields.get(3) {
                if ts.parse::<i64>().is_err() {
                    return Err(DldaError::Parse {
                        line: lineno + 1,
                        message: format!("timestamp `{ts}` is not an integer"),
                    });
                }
            }
            if let (Some(min), Some(r)) = (options.min_rating, rating) {
                if r < min {
                    continue;
                }
            }
            let u = *user_index.entry(fields[0].to_string()).or_insert_with(|| {
                user_ids.push(fields[0].to_string());
                user_ids.len() - 1
            });
            let i = *item_index.entry(fields[1].to_string()).or_insert_with(|| {
                item_ids.push(fields[1].to_string());
                item_ids.len() - 1
            });
            pairs.push((u, i));
        }
        if pairs.is_empty() {
            return Err(DldaError::EmptyDataset);
        }
        Dataset::with_ids(user_ids, item_ids, &pairs)
    }

    /// Writes `raw_user<TAB>raw_item` lines.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(self.len() * 12);
        for &(u, i) in &self.interactions {
            writeln!(out, "{}\t{}", self.user_ids[u], self.item_ids[i]).expect("vec write");
        }
        fs::write(path, out).map_err(|e| DldaError::io(path, e))
    }

    /// Writes `user_index<TAB>item_index` lines.
    pub fn write_index_tsv(pairs: &[(usize, usize)], path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(pairs.len() * 10);
        for &(u, i) in pairs {
            writeln!(out, "{u}\t{i}").expect("vec write");
        }
        fs::write(path, out).map_err(|e| DldaError::io(path, e))
    }

    pub fn read_index_tsv(path: &Path) -> Result<Vec<(usize, usize)>> {
        let text = fs::read_to_string(path).map_err(|e| DldaError::io(path, e))?;
        let mut pairs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut f = line.split('\t');
            let parse = |s: Option<&str>| -> Result<usize> {
                s.and_then(|v| v.trim().parse().ok()).ok_or(DldaError::Parse {
                    line: lineno + 1,
                    message: format!("expected two integer indices in `{line}`"),
                })
            };
            pairs.push((parse(f.next())?, parse(f.next())?));
        }
        Ok(pairs)
    }
}
