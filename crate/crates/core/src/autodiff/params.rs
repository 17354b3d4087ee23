use std::collections::BTreeMap;

use super::array::{NdArray, Real};
use super::{AdError, BN_MOMENTUM};

/// Per-channel normalization statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Real> BnStats<T> {
    /// Initial running statistics: mean 0, variance 1.
    pub fn identity(channels: usize) -> Self {
        BnStats {
            mean: vec![T::ZERO; channels],
            var: vec![T::ONE; channels],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<T> {
    pub value: NdArray<T>,
    pub trainable: bool,
}

/// Named learnable weights plus normalization running statistics, iterated
/// in lexicographic name order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    entries: BTreeMap<String, ParamEntry<T>>,
}

const RUNNING_MEAN: &str = "running_mean";
const RUNNING_VAR: &str = "running_var";

/// True for names that hold normalization statistics rather than weights.
pub fn is_running_stat(name: &str) -> bool {
    name.ends_with(RUNNING_MEAN) || name.ends_with(RUNNING_VAR)
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: BTreeMap::new(),
        }
    }

    /// Add an entry; names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: NdArray<T>, trainable: bool) -> Result<(), AdError> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(AdError::Shape(format!("duplicate parameter `{name}`")));
        }
        self.entries.insert(name, ParamEntry { value, trainable });
        Ok(())
    }

    /// Register γ/β and running statistics for a normalization layer.
    pub fn insert_batch_norm(&mut self, prefix: &str, channels: usize) -> Result<(), AdError> {
        self.insert(format!("{prefix}.gamma"), NdArray::full(&[channels], T::ONE), true)?;
        self.insert(format!("{prefix}.beta"), NdArray::zeros(&[channels]), true)?;
        let init = BnStats::<T>::identity(channels);
        self.insert(
            format!("{prefix}.{RUNNING_MEAN}"),
            NdArray::new(vec![channels], init.mean)?,
            false,
        )?;
        self.insert(
            format!("{prefix}.{RUNNING_VAR}"),
            NdArray::new(vec![channels], init.var)?,
            false,
        )
    }

    pub fn get(&self, name: &str) -> Result<&NdArray<T>, AdError> {
        self.entries
            .get(name)
            .map(|e| &e.value)
            .ok_or_else(|| AdError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut NdArray<T>, AdError> {
        self.entries
            .get_mut(name)
            .map(|e| &mut e.value)
            .ok_or_else(|| AdError::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.entries.get(name).is_some_and(|e| e.trainable)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }

    pub fn trainable_names(&self) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .filter(|(_, e)| e.trainable)
            .map(|(k, _)| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of trainable scalars (running statistics excluded).
    pub fn count_trainable(&self) -> usize {
        self.entries
            .values()
            .filter(|e| e.trainable)
            .map(|e| e.value.len())
            .sum()
    }

    pub fn bn_stats(&self, prefix: &str) -> Result<BnStats<T>, AdError> {
        Ok(BnStats {
            mean: self.get(&format!("{prefix}.{RUNNING_MEAN}"))?.data().to_vec(),
            var: self.get(&format!("{prefix}.{RUNNING_VAR}"))?.data().to_vec(),
        })
    }

    /// `running ← momentum·running + (1 − momentum)·batch`.
    pub fn update_bn(&mut self, prefix: &str, batch: &BnStats<T>) -> Result<(), AdError> {
        let m = T::from_f64(BN_MOMENTUM);
        let one_minus = T::from_f64(1.0 - BN_MOMENTUM);
        for (suffix, src) in [(RUNNING_MEAN, &batch.mean), (RUNNING_VAR, &batch.var)] {
            let dst = self.get_mut(&format!("{prefix}.{suffix}"))?;
            if dst.len() != src.len() {
                return Err(AdError::Shape(format!(
                    "{prefix}.{suffix}: {} channels vs batch stats {}",
                    dst.len(),
                    src.len()
                )));
            }
            for (d, &s) in dst.data_mut().iter_mut().zip(src) {
                *d = m * *d + one_minus * s;
            }
        }
        Ok(())
    }

    /// Named arrays in store order, for serialization.
    pub fn to_named(&self) -> Vec<(String, NdArray<T>)> {
        self.entries
            .iter()
            .map(|(k, v)| (k.clone(), v.value.clone()))
            .collect()
    }

    /// Overwrite every entry from `named`. The name set and every shape must
    /// match this store exactly.
    pub fn load_named<U: Real>(&mut self, named: &[(String, NdArray<U>)]) -> Result<(), AdError> {
        if named.len() != self.entries.len() {
            let given: std::collections::BTreeSet<&str> = named.iter().map(|(n, _)| n.as_str()).collect();
            let missing = self.entries.keys().find(|k| !given.contains(k.as_str()));
            return Err(AdError::Shape(format!(
                "weights hold {} entries, model expects {}{}",
                named.len(),
                self.entries.len(),
                missing.map(|m| format!(" (missing `{m}`)")).unwrap_or_default()
            )));
        }
        for (name, value) in named {
            let entry = self
                .entries
                .get_mut(name)
                .ok_or_else(|| AdError::UnknownParam(name.clone()))?;
            if entry.value.shape() != value.shape() {
                return Err(AdError::Shape(format!(
                    "`{name}`: model expects {:?}, weights have {:?}",
                    entry.value.shape(),
                    value.shape()
                )));
            }
            entry.value = value.cast();
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, e)| {
                    (
                        k.clone(),
                        ParamEntry {
                            value: e.value.cast(),
                            trainable: e.trainable,
                        },
                    )
                })
                .collect(),
        }
    }
}
