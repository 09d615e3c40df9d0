//! Utterance-level statistics, ON-reference standardization, and PCA.

use nalgebra::DMatrix;
use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::corpus::{FrameFeatures, UtteranceFeatures};
use crate::error::{Error, Result};

/// Number of per-dimension statistics produced by [`aggregate_utterance`].
pub const N_STATS: usize = 4;

/// Collapses a frame matrix into `mean ‖ std ‖ kurtosis ‖ skewness`, each
/// block `D` long.
///
/// Moments are population moments over time. Kurtosis is Fisher excess
/// (`m4/m2² − 3`); skewness is `m3/m2^1.5`. A constant column has std,
/// skewness and kurtosis exactly 0.
pub fn aggregate_utterance(m: &FrameFeatures) -> Result<UtteranceFeatures> {
    aggregate_frames(m.values())
}

pub(crate) fn aggregate_frames(values: &Array2<f64>) -> Result<UtteranceFeatures> {
    let (t, d) = values.dim();
    if t == 0 || d == 0 {
        return Err(Error::EmptyMatrix);
    }
    let mut out = Array1::zeros(N_STATS * d);
    let n = t as f64;
    for (j, col) in values.axis_iter(Axis(1)).enumerate() {
        let first = col[0];
        if col.iter().all(|&v| v == first) {
            out[j] = first;
            continue;
        }
        let mean = col.sum() / n;
        let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
        for &v in col.iter() {
            let dv = v - mean;
            let dv2 = dv * dv;
            m2 += dv2;
            m3 += dv2 * dv;
            m4 += dv2 * dv2;
        }
        m2 /= n;
        m3 /= n;
        m4 /= n;
        out[j] = mean;
        out[d + j] = m2.sqrt();
        if m2 > 0.0 {
            out[2 * d + j] = m4 / (m2 * m2) - 3.0;
            out[3 * d + j] = m3 / m2.powf(1.5);
        }
    }
    UtteranceFeatures::new(out)
}

/// Which population the standardizer is fit on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// ON-state training samples only.
    #[default]
    OnReference,
    /// All training samples, both states.
    Global,
    /// Identity transform.
    None,
}

/// Per-dimension median and sample standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationParams {
    pub median: Array1<f64>,
    pub std: Array1<f64>,
}

impl StandardizationParams {
    /// Median 0, std 1: leaves inputs untouched.
    pub fn identity(dim: usize) -> Self {
        StandardizationParams {
            median: Array1::zeros(dim),
            std: Array1::ones(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.median.len()
    }

    pub fn apply(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "standardizer fit on {} dims, input has {}",
                self.dim(),
                x.len()
            )));
        }
        Ok(ndarray::Zip::from(&x)
            .and(&self.median)
            .and(&self.std)
            .map_collect(|&v, &med, &sd| if sd > 0.0 { (v - med) / sd } else { 0.0 }))
    }

    /// Standardizes every row of a matrix (frames or stacked utterances).
    pub fn apply_rows(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "standardizer fit on {} dims, input has {} columns",
                self.dim(),
                x.ncols()
            )));
        }
        let mut out = x.clone();
        for mut row in out.rows_mut() {
            for ((v, &med), &sd) in row.iter_mut().zip(&self.median).zip(&self.std) {
                *v = if sd > 0.0 { (*v - med) / sd } else { 0.0 };
            }
        }
        Ok(out)
    }
}

pub fn fit_standardizer(rows: &[UtteranceFeatures]) -> Result<StandardizationParams> {
    let views: Vec<ArrayView1<f64>> = rows.iter().map(|r| r.values().view()).collect();
    fit_standardizer_rows(&views)
}

pub fn apply_standardizer(p: &StandardizationParams, x: &UtteranceFeatures) -> Result<UtteranceFeatures> {
    UtteranceFeatures::new(p.apply(x.values().view())?)
}

/// Frame matrices are standardized column by column.
pub fn apply_standardizer_frames(p: &StandardizationParams, m: &FrameFeatures) -> Result<FrameFeatures> {
    FrameFeatures::new(p.apply_rows(m.values())?, m.frame_period_ms())
}

/// Fits median and sample std (divisor `N − 1`) per dimension.
pub fn fit_standardizer_rows(rows: &[ArrayView1<f64>]) -> Result<StandardizationParams> {
    if rows.len() < 2 {
        return Err(Error::TooFewRows {
            needed: 2,
            got: rows.len(),
        });
    }
    let d = rows[0].len();
    if let Some(bad) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch(format!(
            "rows of length {d} and {}",
            bad.len()
        )));
    }
    let n = rows.len();
    let mut median = Array1::zeros(d);
    let mut std = Array1::zeros(d);
    let mut column = vec![0.0; n];
    for j in 0..d {
        for (c, r) in column.iter_mut().zip(rows) {
            *c = r[j];
        }
        column.sort_by(f64::total_cmp);
        median[j] = if n % 2 == 1 {
            column[n / 2]
        } else {
            0.5 * (column[n / 2 - 1] + column[n / 2])
        };
        let mean = column.iter().sum::<f64>() / n as f64;
        let ss: f64 = column.iter().map(|v| (v - mean) * (v - mean)).sum();
        std[j] = (ss / (n - 1) as f64).sqrt();
    }
    Ok(StandardizationParams { median, std })
}

/// Principal components of a mean-centred data matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Array1<f64>,
    /// `k x D`, orthonormal rows.
    pub components: Array2<f64>,
    /// Non-increasing, one per component.
    pub explained_variance: Array1<f64>,
    /// Trailing components whose variance is numerically zero.
    pub zero_variance: usize,
}

/// Fits the top-`k` principal components of `x` (`N x D`).
///
/// Each component is sign-normalized so its largest-magnitude entry is
/// non-negative. `k` may not exceed `min(N − 1, D)`; components beyond the
/// data's rank are counted in [`PcaModel::zero_variance`].
pub fn fit_pca(x: &Array2<f64>, k: usize) -> Result<PcaModel> {
    let (n, d) = x.dim();
    if n < 2 {
        return Err(Error::TooFewRows { needed: 2, got: n });
    }
    let max_k = (n - 1).min(d);
    if k == 0 || k > max_k {
        return Err(Error::BadK { k, max: max_k });
    }
    let mean = x.mean_axis(Axis(0)).expect("n >= 2");
    let centered = x - &mean;
    let dm = DMatrix::from_fn(n, d, |i, j| centered[[i, j]]);
    let svd = dm.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let top = svd.singular_values[order[0]];
    let cutoff = top * (n.max(d) as f64) * f64::EPSILON;
    let mut components = Array2::zeros((k, d));
    let mut explained_variance = Array1::zeros(k);
    let mut zero_variance = 0;
    for (row, &idx) in order.iter().take(k).enumerate() {
        let sv = svd.singular_values[idx];
        let mut comp: Array1<f64> = (0..d).map(|j| v_t[(idx, j)]).collect();
        let pivot = comp
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |(bi, bv), (i, &v)| {
                if v.abs() > bv {
                    (i, v.abs())
                } else {
                    (bi, bv)
                }
            })
            .0;
        if comp[pivot] < 0.0 {
            comp.mapv_inplace(|v| -v);
        }
        components.row_mut(row).assign(&comp);
        explained_variance[row] = sv * sv / (n - 1) as f64;
        if sv <= cutoff {
            zero_variance += 1;
        }
    }
    if zero_variance > 0 {
        log::warn!("PCA: {zero_variance} of {k} requested components carry no variance");
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
        zero_variance,
    })
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.components.nrows()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// The leading `k` components of this model. Equivalent to refitting with `k`.
    pub fn truncate(&self, k: usize) -> Result<PcaModel> {
        if k == 0 || k > self.k() {
            return Err(Error::BadK { k, max: self.k() });
        }
        let zero_variance = self.zero_variance.saturating_sub(self.k() - k);
        Ok(PcaModel {
            mean: self.mean.clone(),
            components: self.components.slice(s![..k, ..]).to_owned(),
            explained_variance: self.explained_variance.slice(s![..k]).to_owned(),
            zero_variance,
        })
    }

    pub fn transform(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "PCA fit on {} dims, input has {}",
                self.dim(),
                x.len()
            )));
        }
        Ok(self.components.dot(&(&x - &self.mean)))
    }

    /// Projects each row of `x`.
    pub fn transform_rows(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "PCA fit on {} dims, input has {} columns",
                self.dim(),
                x.ncols()
            )));
        }
        Ok((x - &self.mean).dot(&self.components.t()))
    }

    pub fn inverse_transform(&self, z: ArrayView1<f64>) -> Result<Array1<f64>> {
        if z.len() != self.k() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} scores, got {}",
                self.k(),
                z.len()
            )));
        }
        Ok(self.components.t().dot(&z) + &self.mean)
    }
}

pub fn pca_transform(p: &PcaModel, x: ArrayView1<f64>) -> Result<Array1<f64>> {
    p.transform(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frames(values: Array2<f64>) -> FrameFeatures {
        FrameFeatures::new(values, 10.0).unwrap()
    }

    #[test]
    fn constant_matrix_has_zero_moments() {
        let c = 0.1;
        let u = aggregate_utterance(&frames(Array2::from_elem((5, 2), c))).unwrap();
        assert_eq!(u.values().to_vec(), vec![c, c, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn one_three_five() {
        let u = aggregate_utterance(&frames(array![[1.0], [3.0], [5.0]])).unwrap();
        let v = u.values();
        assert!((v[0] - 3.0).abs() < 1e-15);
        assert!((v[1] - (8.0f64 / 3.0).sqrt()).abs() < 1e-14);
        assert!((v[1] - 1.63299).abs() < 1e-5);
        assert!((v[2] - -1.5).abs() < 1e-14);
        assert!(v[3].abs() < 1e-15);
    }

    #[test]
    fn mean_of_indicator() {
        let u = aggregate_utterance(&frames(array![[0.0], [0.0], [0.0], [1.0]])).unwrap();
        assert_eq!(u.values()[0], 0.25);
    }

    #[test]
    fn standardizer_textbook() {
        let rows: Vec<_> = [1.0, 2.0, 3.0]
            .iter()
            .map(|&v| UtteranceFeatures::new(array![v]).unwrap())
            .collect();
        let p = fit_standardizer(&rows).unwrap();
        assert_eq!(p.median[0], 2.0);
        assert_eq!(p.std[0], 1.0);

        let even: Vec<_> = [1.0, 3.0]
            .iter()
            .map(|&v| UtteranceFeatures::new(array![v]).unwrap())
            .collect();
        assert_eq!(fit_standardizer(&even).unwrap().median[0], 2.0);
    }

    #[test]
    fn standardizer_errors() {
        let one = vec![UtteranceFeatures::new(array![1.0]).unwrap()];
        assert!(matches!(fit_standardizer(&one), Err(Error::TooFewRows { .. })));
        let mixed = vec![
            UtteranceFeatures::new(array![1.0]).unwrap(),
            UtteranceFeatures::new(array![1.0, 2.0]).unwrap(),
        ];
        assert!(matches!(fit_standardizer(&mixed), Err(Error::DimensionMismatch(_))));
        let p = StandardizationParams::identity(2);
        assert!(p.apply(array![1.0].view()).is_err());
    }

    #[test]
    fn standardizer_apply_cases() {
        let p = StandardizationParams {
            median: array![2.0, 5.0],
            std: array![2.0, 0.0],
        };
        assert_eq!(p.apply(array![4.0, 123.0].view()).unwrap().to_vec(), vec![1.0, 0.0]);
        assert_eq!(p.apply(p.median.view()).unwrap().to_vec(), vec![0.0, 0.0]);
        let m = frames(array![[4.0, 1.0], [2.0, 9.0]]);
        let out = apply_standardizer_frames(&p, &m).unwrap();
        assert_eq!(out.values(), &array![[1.0, 0.0], [0.0, 0.0]]);
    }

    #[test]
    fn standardizer_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<Array1<f64>> = (0..100)
            .map(|_| (0..4).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect();
        let feats: Vec<_> = rows
            .iter()
            .map(|r| UtteranceFeatures::new(r.clone()).unwrap())
            .collect();
        let p = fit_standardizer(&feats).unwrap();
        for j in 0..4 {
            let mut col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            col.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let med = (col[49] + col[50]) / 2.0;
            let mean: f64 = col.iter().sum::<f64>() / 100.0;
            let var: f64 = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 99.0;
            assert!((p.median[j] - med).abs() < 1e-12);
            assert!((p.std[j] - var.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn pca_two_points() {
        let p = fit_pca(&array![[-1.0, 0.0], [1.0, 0.0]], 1).unwrap();
        assert!((p.components[[0, 0]] - 1.0).abs() < 1e-12);
        assert!(p.components[[0, 1]].abs() < 1e-12);
        assert!((p.explained_variance[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn pca_bad_k() {
        let x = Array2::zeros((3, 5));
        assert!(matches!(fit_pca(&x, 0), Err(Error::BadK { .. })));
        assert!(matches!(fit_pca(&x, 3), Err(Error::BadK { k: 3, max: 2 })));
        assert!(matches!(fit_pca(&Array2::zeros((1, 2)), 1), Err(Error::TooFewRows { .. })));
    }

    #[test]
    fn pca_flags_rank_deficiency() {
        // Five points on a line in 3-D: rank 1.
        let x = Array2::from_shape_fn((5, 3), |(i, j)| (i as f64) * [1.0, 2.0, -1.0][j]);
        let p = fit_pca(&x, 3).unwrap();
        assert_eq!(p.zero_variance, 2);
        assert_eq!(p.truncate(1).unwrap().zero_variance, 0);
    }

    #[test]
    fn pca_full_rank_reconstruction() {
        let x = array![
            [3.0, 0.0, 0.0],
            [-3.0, 0.0, 0.0],
            [0.0, 2.0, 0.0],
            [0.0, -2.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, -1.0]
        ];
        let p = fit_pca(&x, 3).unwrap();
        for row in x.rows() {
            let z = p.transform(row).unwrap();
            let back = p.inverse_transform(z.view()).unwrap();
            for (a, b) in back.iter().zip(row) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn pca_transform_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array2::from_shape_fn((12, 4), |_| rng.random_range(-1.0..1.0));
        let p = fit_pca(&x, 3).unwrap();
        assert!(p.transform(p.mean.view()).unwrap().iter().all(|v| v.abs() < 1e-15));
        let shifted = &p.mean + &p.components.row(0);
        let z = p.transform(shifted.view()).unwrap();
        assert!((z[0] - 1.0).abs() < 1e-12 && z[1].abs() < 1e-12 && z[2].abs() < 1e-12);

        let probe: Array1<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
        let z = p.transform(probe.view()).unwrap();
        for i in 0..3 {
            let expect: f64 = (0..4)
                .map(|j| p.components[[i, j]] * (probe[j] - p.mean[j]))
                .sum();
            assert!((z[i] - expect).abs() < 1e-12);
        }
        let rows = p.transform_rows(&x).unwrap();
        let first = p.transform(x.row(0)).unwrap();
        for i in 0..3 {
            assert!((rows[[0, i]] - first[i]).abs() < 1e-12);
        }
        assert!(p.transform(array![1.0].view()).is_err());
    }

    proptest! {
        #[test]
        fn aggregation_is_order_invariant(seed in any::<u64>(), t in 2usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Array2::from_shape_fn((t, 3), |_| rng.random_range(-2.0..2.0));
            let mut rev = x.clone();
            rev.invert_axis(Axis(0));
            let a = aggregate_frames(&x).unwrap();
            let b = aggregate_frames(&rev).unwrap();
            for (u, v) in a.values().iter().zip(b.values()) {
                prop_assert!((u - v).abs() <= 1e-12 * (1.0 + u.abs()));
            }
        }

        #[test]
        fn median_maps_to_zero(seed in any::<u64>(), n in 2usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<_> = (0..n)
                .map(|_| UtteranceFeatures::new((0..3).map(|_| rng.random_range(-9.0..9.0)).collect()).unwrap())
                .collect();
            let p = fit_standardizer(&rows).unwrap();
            let z = p.apply(p.median.view()).unwrap();
            prop_assert!(z.iter().all(|&v| v == 0.0));
        }

        #[test]
        fn standardization_is_affine(seed in any::<u64>(), a in 0.1f64..5.0, b in -5.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = StandardizationParams {
                median: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
                std: (0..4).map(|_| rng.random_range(0.5..2.0)).collect(),
            };
            let x: Array1<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let y = x.mapv(|v| a * v + b);
            let zx = p.apply(x.view()).unwrap();
            let zy = p.apply(y.view()).unwrap();
            for j in 0..4 {
                let expect = a * zx[j] + (b + (a - 1.0) * p.median[j]) / p.std[j];
                prop_assert!((zy[j] - expect).abs() < 1e-12);
            }
        }
    }
}
