use serde::{Deserialize, Serialize};

use super::FeatureVector;
use crate::error::{Error, Result};

/// Per-slot min/max envelope learned from training vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub schema_version: String,
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

impl NormalizationParams {
    pub fn dimension(&self) -> usize {
        self.mins.len()
    }

    /// Min-max scales raw values into [0, 1]; constant slots map to 0.
    pub fn apply(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.mins.len() {
            return Err(Error::DimensionMismatch { expected: self.mins.len(), actual: values.len() });
        }
        Ok(values
            .iter()
            .zip(self.mins.iter().zip(&self.maxs))
            .map(|(&v, (&lo, &hi))| {
                let span = hi - lo;
                if span > 0.0 {
                    ((v - lo) / span).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect())
    }
}

pub fn fit_normalizer(vectors: &[FeatureVector]) -> Result<NormalizationParams> {
    let first = vectors.first().ok_or(Error::EmptyInput("no training vectors to fit"))?;
    let mut mins = first.values.clone();
    let mut maxs = first.values.clone();
    for v in &vectors[1..] {
        if v.schema_version != first.schema_version {
            return Err(Error::SchemaMismatch {
                expected: first.schema_version.clone(),
                actual: v.schema_version.clone(),
            });
        }
        if v.len() != mins.len() {
            return Err(Error::DimensionMismatch { expected: mins.len(), actual: v.len() });
        }
        for ((lo, hi), &x) in mins.iter_mut().zip(maxs.iter_mut()).zip(&v.values) {
            *lo = lo.min(x);
            *hi = hi.max(x);
        }
    }
    Ok(NormalizationParams { schema_version: first.schema_version.clone(), mins, maxs })
}

pub fn normalize(v: &FeatureVector, params: &NormalizationParams) -> Result<FeatureVector> {
    if v.schema_version != params.schema_version {
        return Err(Error::SchemaMismatch {
            expected: params.schema_version.clone(),
            actual: v.schema_version.clone(),
        });
    }
    Ok(FeatureVector { values: params.apply(&v.values)?, ..v.clone() })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn fv(values: Vec<f64>) -> FeatureVector {
        FeatureVector::new(values, "s")
    }

    #[test]
    fn single_vector_envelope() {
        let p = fit_normalizer(&[fv(vec![1.0, -2.0])]).unwrap();
        assert_eq!(p.mins, [1.0, -2.0]);
        assert_eq!(p.maxs, [1.0, -2.0]);
        assert_eq!(normalize(&fv(vec![1.0, -2.0]), &p).unwrap().values, [0.0, 0.0]);
    }

    #[test]
    fn endpoints_and_clamping() {
        let p = fit_normalizer(&[fv(vec![0.0, 10.0]), fv(vec![4.0, 20.0])]).unwrap();
        assert_eq!(p.mins, [0.0, 10.0]);
        assert_eq!(p.maxs, [4.0, 20.0]);
        assert_eq!(normalize(&fv(vec![0.0, 10.0]), &p).unwrap().values, [0.0, 0.0]);
        assert_eq!(normalize(&fv(vec![4.0, 20.0]), &p).unwrap().values, [1.0, 1.0]);
        assert_eq!(normalize(&fv(vec![-3.0, 99.0]), &p).unwrap().values, [0.0, 1.0]);
        assert_eq!(normalize(&fv(vec![1.0, 15.0]), &p).unwrap().values, [0.25, 0.5]);
    }

    #[test]
    fn errors() {
        assert!(matches!(fit_normalizer(&[]), Err(Error::EmptyInput(_))));
        let p = fit_normalizer(&[fv(vec![0.0])]).unwrap();
        let other = FeatureVector::new(vec![0.0], "other");
        assert!(matches!(normalize(&other, &p), Err(Error::SchemaMismatch { .. })));
        assert!(matches!(normalize(&fv(vec![0.0, 1.0]), &p), Err(Error::DimensionMismatch { .. })));
    }

    proptest! {
        #[test]
        fn members_never_clamp(rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 5), 1..20)) {
            let vs: Vec<_> = rows.iter().cloned().map(fv).collect();
            let p = fit_normalizer(&vs).unwrap();
            for (col, (lo, hi)) in p.mins.iter().zip(&p.maxs).enumerate() {
                let column: Vec<f64> = rows.iter().map(|r| r[col]).collect();
                prop_assert_eq!(*lo, column.iter().copied().fold(f64::INFINITY, f64::min));
                prop_assert_eq!(*hi, column.iter().copied().fold(f64::NEG_INFINITY, f64::max));
            }
            for (v, raw) in vs.iter().zip(&rows) {
                let n = normalize(v, &p).unwrap();
                for (i, x) in n.values.iter().enumerate() {
                    prop_assert!((0.0..=1.0).contains(x));
                    let span = p.maxs[i] - p.mins[i];
                    if span > 0.0 {
                        // unclamped value must already lie in range
                        let raw_scaled = (raw[i] - p.mins[i]) / span;
                        prop_assert!((0.0..=1.0).contains(&raw_scaled));
                        prop_assert_eq!(*x, raw_scaled);
                    }
                }
            }
        }

        #[test]
        fn output_in_unit_interval(train in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 4), 1..10),
                                   probe in prop::collection::vec(-1e4f64..1e4, 4)) {
            let vs: Vec<_> = train.into_iter().map(fv).collect();
            let p = fit_normalizer(&vs).unwrap();
            let n = normalize(&fv(probe), &p).unwrap();
            prop_assert!(n.values.iter().all(|x| (0.0..=1.0).contains(x)));
        }
    }
}
