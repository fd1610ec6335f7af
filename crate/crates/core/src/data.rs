//! In-memory dataset: a count response, named numeric covariates, and named
//! categorical factors.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariate {
    pub name: String,
    pub values: Vec<f64>,
}

/// Dictionary-encoded categorical column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub name: String,
    pub levels: Vec<String>,
    pub codes: Vec<u32>,
}

impl Factor {
    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    /// Encodes labels in first-appearance order.
    pub fn from_labels<S: AsRef<str>>(name: &str, labels: &[S]) -> Self {
        let mut levels: Vec<String> = Vec::new();
        let mut index = std::collections::HashMap::new();
        let codes = labels
            .iter()
            .map(|l| {
                let l = l.as_ref();
                *index.entry(l.to_string()).or_insert_with(|| {
                    levels.push(l.to_string());
                    (levels.len() - 1) as u32
                })
            })
            .collect();
        Self {
            name: name.to_string(),
            levels,
            codes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub response_name: String,
    pub response: Vec<u64>,
    pub covariates: Vec<Covariate>,
    pub factors: Vec<Factor>,
}

impl Dataset {
    pub fn new(
        response_name: impl Into<String>,
        response: Vec<u64>,
        covariates: Vec<Covariate>,
        factors: Vec<Factor>,
    ) -> Result<Self> {
        let ds = Self {
            response_name: response_name.into(),
            response,
            covariates,
            factors,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn n(&self) -> usize {
        self.response.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let mut seen = std::collections::HashSet::new();
        seen.insert(self.response_name.as_str());
        for c in &self.covariates {
            if c.values.len() != n {
                return Err(Error::Data(format!(
                    "covariate `{}` has {} values, expected {n}",
                    c.name,
                    c.values.len()
                )));
            }
            if let Some(i) = c.values.iter().position(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "covariate `{}` has a non-finite value at row {i}",
                    c.name
                )));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Data(format!("duplicate column `{}`", c.name)));
            }
        }
        for f in &self.factors {
            if f.codes.len() != n {
                return Err(Error::Data(format!(
                    "factor `{}` has {} codes, expected {n}",
                    f.name,
                    f.codes.len()
                )));
            }
            if f.codes.iter().any(|&c| c as usize >= f.levels.len()) {
                return Err(Error::Data(format!("factor `{}` has an out-of-range code", f.name)));
            }
            if !seen.insert(f.name.as_str()) {
                return Err(Error::Data(format!("duplicate column `{}`", f.name)));
            }
        }
        Ok(())
    }

    pub fn covariate(&self, name: &str) -> Option<&Covariate> {
        self.covariates.iter().find(|c| c.name == name)
    }

    pub fn covariate_mut(&mut self, name: &str) -> Option<&mut Covariate> {
        self.covariates.iter_mut().find(|c| c.name == name)
    }

    pub fn factor(&self, name: &str) -> Option<&Factor> {
        self.factors.iter().find(|f| f.name == name)
    }

    pub fn covariate_names(&self) -> Vec<String> {
        self.covariates.iter().map(|c| c.name.clone()).collect()
    }

    /// Rows reordered so that row `k` of the result is row `order[k]` of `self`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.n() {
            return Err(Error::Contract("permutation length mismatch".into()));
        }
        let covariates = self
            .covariates
            .iter()
            .map(|c| Covariate {
                name: c.name.clone(),
                values: order.iter().map(|&i| c.values[i]).collect(),
            })
            .collect();
        let factors = self
            .factors
            .iter()
            .map(|f| Factor {
                name: f.name.clone(),
                levels: f.levels.clone(),
                codes: order.iter().map(|&i| f.codes[i]).collect(),
            })
            .collect();
        Dataset::new(
            self.response_name.clone(),
            order.iter().map(|&i| self.response[i]).collect(),
            covariates,
            factors,
        )
    }

    /// Hex digest of the response vector; fits on the same data share it.
    pub fn response_checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n() as u64).to_le_bytes());
        for &y in &self.response {
            h.update(y.to_le_bytes());
        }
        hex::encode(&h.finalize()[..16])
    }

    pub fn total_response(&self) -> u64 {
        self.response.iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_appearance_encoding() {
        let f = Factor::from_labels("state", &["TX", "CA", "TX", "FL", "CA"]);
        assert_eq!(f.levels, vec!["TX", "CA", "FL"]);
        assert_eq!(f.codes, vec![0, 1, 0, 2, 1]);
    }

    #[test]
    fn length_mismatch_rejected() {
        let r = Dataset::new(
            "y",
            vec![1, 2, 3],
            vec![Covariate {
                name: "x".into(),
                values: vec![1.0, 2.0],
            }],
            vec![],
        );
        assert!(matches!(r, Err(Error::Data(_))));
    }

    #[test]
    fn checksum_depends_on_response_only() {
        let a = Dataset::new("y", vec![0, 3, 1], vec![], vec![]).unwrap();
        let mut b = a.clone();
        b.covariates.push(Covariate {
            name: "x".into(),
            values: vec![0.0; 3],
        });
        assert_eq!(a.response_checksum(), b.response_checksum());
        let c = Dataset::new("y", vec![0, 3, 2], vec![], vec![]).unwrap();
        assert_ne!(a.response_checksum(), c.response_checksum());
    }
}
