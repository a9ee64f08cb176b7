use super::Dataset;
use crate::error::{DldaError, Result};
use crate::projection::FakeProfileSet;

/// Number of fake users for an injection ratio over `real_users`.
pub fn fake_user_count(injection_ratio: f64, real_users: usize) -> usize {
    (injection_ratio * real_users as f64).round() as usize
}

/// Average training interactions per real user, rounded.
pub fn activity_cap(train: &Dataset) -> usize {
    if train.user_count() == 0 {
        return 0;
    }
    (train.len() as f64 / train.user_count() as f64).round() as usize
}

/// Training matrix with fake rows appended below the real users.
#[derive(Clone, Debug, PartialEq)]
pub struct PoisonedMatrix {
    base: Dataset,
    fake_rows: Vec<Vec<usize>>,
}

impl PoisonedMatrix {
    pub fn base(&self) -> &Dataset {
        &self.base
    }

    pub fn fake_rows(&self) -> &[Vec<usize>] {
        &self.fake_rows
    }

    pub fn real_users(&self) -> usize {
        self.base.user_count()
    }

    pub fn total_users(&self) -> usize {
        self.base.user_count() + self.fake_rows.len()
    }

    /// Flattens into a dataset over `M + M_a` users; fake user `k` gets
    /// index `M + k` and raw id `fake_k`.
    pub fn to_dataset(&self) -> Result<Dataset> {
        let m = self.base.user_count();
        let mut user_ids = self.base.user_ids().to_vec();
        user_ids.extend((0..self.fake_rows.len()).map(|k| format!("fake_{k}")));
        let mut pairs = self.base.interactions().to_vec();
        for (k, row) in self.fake_rows.iter().enumerate() {
            pairs.extend(row.iter().map(|&i| (m + k, i)));
        }
        Dataset::with_ids(user_ids, self.base.item_ids().to_vec(), &pairs)
    }
}

/// Appends fake profiles to `train`. Rows must index valid items and hold at
/// most `cap` interactions.
pub fn inject_profiles(train: &Dataset, fakes: &FakeProfileSet, cap: usize) -> Result<PoisonedMatrix> {
    let n = train.item_count();
    if fakes.item_count() != n {
        return Err(DldaError::invalid(format!(
            "fake rows have width {}, dataset has {n} items",
            fakes.item_count()
        )));
    }
    let mut rows = Vec::with_capacity(fakes.len());
    for (k, p) in fakes.profiles().iter().enumerate() {
        if p.items.len() > cap {
            return Err(DldaError::ActivityCapExceeded {
                row: k,
                count: p.items.len(),
                cap,
            });
        }
        if let Some(&bad) = p.items.iter().find(|&&i| i >= n) {
            return Err(DldaError::invalid(format!("fake row {k} references item {bad}")));
        }
        rows.push(p.items.clone());
    }
    Ok(PoisonedMatrix {
        base: train.clone(),
        fake_rows: rows,
    })
}
