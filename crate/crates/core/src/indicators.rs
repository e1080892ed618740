//! Weak-supervision labels for the uncertainty head.
//!
//! Two indicators are produced per sample: the data-quality gap between a
//! window and its corrupted copy, and a spatiotemporal variance that averages
//! a spatial-neighbour view, an inter-period view and an intra-period view.
//! All dispersions are population standard deviations.

use ndarray::{Array1, Array2, Array3, Axis};

use crate::error::{Result, StuaError};
use crate::graphcore::{build_period_stack, UrbanGraph};

/// Share of regions treated as spatial neighbours.
pub const NEIGHBOR_SHARE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndicatorKind {
    Quality,
    VarS,
    VarEp,
    VarIp,
    VarSt,
}

impl IndicatorKind {
    pub fn label(self) -> &'static str {
        match self {
            IndicatorKind::Quality => "quality",
            IndicatorKind::VarS => "var_s",
            IndicatorKind::VarEp => "var_ep",
            IndicatorKind::VarIp => "var_ip",
            IndicatorKind::VarSt => "var_st",
        }
    }
}

/// Per-region nearest neighbours, excluding the region itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborSet {
    lists: Vec<Vec<usize>>,
}

pub fn neighbor_count(n: usize) -> usize {
    ((NEIGHBOR_SHARE * n as f64).ceil() as usize).max(1)
}

impl NeighborSet {
    pub fn from_graph(graph: &UrbanGraph) -> Self {
        Self {
            lists: graph.nearest_neighbors(neighbor_count(graph.len())),
        }
    }

    pub fn from_lists(lists: Vec<Vec<usize>>) -> Self {
        assert!(
            lists
                .iter()
                .enumerate()
                .all(|(i, l)| !l.is_empty() && !l.contains(&i)),
            "neighbour lists must be non-empty and exclude the region itself"
        );
        Self { lists }
    }

    pub fn lists(&self) -> &[Vec<usize>] {
        &self.lists
    }

    pub fn of(&self, region: usize) -> &[usize] {
        &self.lists[region]
    }
}

pub fn population_std(values: impl IntoIterator<Item = f64>) -> f64 {
    let values: Array1<f64> = values.into_iter().collect();
    if values.is_empty() {
        return 0.0;
    }
    let mean = values.mean().unwrap_or(0.0);
    values
        .mapv(|v| (v - mean).powi(2))
        .mean()
        .unwrap_or(0.0)
        .sqrt()
}

/// Interval-level data quality `|H - H_C|`.
pub fn quality_indicator(clean: &Array2<f64>, corrupted: &Array2<f64>) -> Result<Array2<f64>> {
    if clean.dim() != corrupted.dim() {
        return Err(StuaError::shape(
            "quality_indicator",
            format!("{:?}", clean.dim()),
            format!("{:?}", corrupted.dim()),
        ));
    }
    Ok((clean - corrupted).mapv(f64::abs))
}

/// Period-level label: the mean of the interval-level values.
pub fn period_average(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// The three dispersion views of a `(q+2) x p x N` period window.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceViews {
    /// `(q+2) x N`
    pub var_s: Array2<f64>,
    /// One value per region, shared by every period.
    pub var_ep: Array1<f64>,
    /// `(q+2) x N`
    pub var_ip: Array2<f64>,
    /// Set when `p < 2`, where the intra-period view is identically 0.
    pub intra_degenerate: bool,
}

pub fn variance_views(window: &Array3<f64>, neighbors: &NeighborSet) -> VarianceViews {
    let (periods, p, n) = window.dim();
    let mut var_s = Array2::zeros((periods, n));
    let mut var_ip = Array2::zeros((periods, n));
    let mut var_ep = Array1::zeros(n);

    for i in 0..n {
        for m in 0..periods {
            let per_slot =
                (0..p).map(|j| population_std(neighbors.of(i).iter().map(|&k| window[[m, j, k]])));
            var_s[[m, i]] = per_slot.sum::<f64>() / p as f64;
            if p >= 2 {
                var_ip[[m, i]] = population_std((0..p).map(|j| window[[m, j, i]]));
            }
        }
        var_ep[i] = (0..p)
            .map(|j| population_std((0..periods).map(|b| window[[b, j, i]])))
            .sum::<f64>()
            / p as f64;
    }
    VarianceViews {
        var_s,
        var_ep,
        var_ip,
        intra_degenerate: p < 2,
    }
}

/// Arithmetic mean of three equally shaped views.
pub fn st_variance(
    var_s: &Array2<f64>,
    var_ep: &Array2<f64>,
    var_ip: &Array2<f64>,
) -> Result<Array2<f64>> {
    if var_s.dim() != var_ep.dim() || var_s.dim() != var_ip.dim() {
        return Err(StuaError::shape(
            "st_variance",
            format!("{:?}", var_s.dim()),
            format!("{:?} / {:?}", var_ep.dim(), var_ip.dim()),
        ));
    }
    Ok((var_s + var_ep + var_ip) / 3.0)
}

impl VarianceViews {
    /// `var_ep` broadcast over periods.
    pub fn var_ep_field(&self) -> Array2<f64> {
        let periods = self.var_s.nrows();
        self.var_ep
            .broadcast((periods, self.var_ep.len()))
            .expect("broadcast var_ep")
            .to_owned()
    }

    /// `(q+2) x N` spatiotemporal variance.
    pub fn st_variance(&self) -> Array2<f64> {
        st_variance(&self.var_s, &self.var_ep_field(), &self.var_ip).expect("views share a shape")
    }
}

/// Spatiotemporal variance of the interval after `last`, computed on the
/// closeness window shifted forward by one (`last - p + 2 ..= last + 1`).
pub fn target_variance(
    tensor: &Array2<f64>,
    neighbors: &NeighborSet,
    last: usize,
    p: usize,
    q: usize,
    intervals_per_day: usize,
) -> Result<Array1<f64>> {
    let target = last + 1;
    if target >= tensor.nrows() {
        return Err(StuaError::InsufficientHistory {
            target,
            needed: tensor.nrows(),
        });
    }
    let stack = build_period_stack(target, p, q, intervals_per_day)?;
    let views = variance_views(&stack.gather(tensor), neighbors);
    Ok(views.st_variance().index_axis(Axis(0), q + 1).to_owned())
}

/// Brute-force recomputation of the variance views straight from a raw
/// `T x N` tensor and an index layout (`period -> slot -> source intervals`).
pub mod oracle {
    #[derive(Debug, Clone, PartialEq)]
    pub struct OracleViews {
        pub var_s: Vec<Vec<f64>>,
        pub var_ep: Vec<f64>,
        pub var_ip: Vec<Vec<f64>>,
        pub var_st: Vec<Vec<f64>>,
    }

    fn stdv(xs: &[f64]) -> f64 {
        let mut total = 0.0;
        for x in xs {
            total += x;
        }
        let mean = total / xs.len() as f64;
        let mut dev = 0.0;
        for x in xs {
            dev += (x - mean) * (x - mean);
        }
        (dev / xs.len() as f64).sqrt()
    }

    fn observation(
        tensor: &ndarray::Array2<f64>,
        layout: &[Vec<Vec<usize>>],
        m: usize,
        j: usize,
        region: usize,
    ) -> f64 {
        let sources = &layout[m][j];
        let mut acc = 0.0;
        for &t in sources {
            acc += tensor[[t, region]];
        }
        acc / sources.len() as f64
    }

    pub fn oracle_st_variance(
        tensor: &ndarray::Array2<f64>,
        neighbors: &[Vec<usize>],
        layout: &[Vec<Vec<usize>>],
    ) -> OracleViews {
        let periods = layout.len();
        let p = layout[0].len();
        let n = neighbors.len();
        let mut var_s = vec![vec![0.0; n]; periods];
        let mut var_ip = vec![vec![0.0; n]; periods];
        let mut var_ep = vec![0.0; n];
        let mut var_st = vec![vec![0.0; n]; periods];

        for i in 0..n {
            let mut ep_total = 0.0;
            for j in 0..p {
                let mut across = Vec::new();
                for b in 0..periods {
                    across.push(observation(tensor, layout, b, j, i));
                }
                ep_total += stdv(&across);
            }
            var_ep[i] = ep_total / p as f64;

            for m in 0..periods {
                let mut s_total = 0.0;
                let mut own = Vec::new();
                for j in 0..p {
                    let mut near = Vec::new();
                    for &k in &neighbors[i] {
                        near.push(observation(tensor, layout, m, j, k));
                    }
                    s_total += stdv(&near);
                    own.push(observation(tensor, layout, m, j, i));
                }
                var_s[m][i] = s_total / p as f64;
                var_ip[m][i] = if p < 2 { 0.0 } else { stdv(&own) };
                var_st[m][i] = (var_s[m][i] + var_ep[i] + var_ip[m][i]) / 3.0;
            }
        }
        OracleViews {
            var_s,
            var_ep,
            var_ip,
            var_st,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::oracle::oracle_st_variance;
    use super::*;
    use crate::graphcore::build_period_stack;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn neighbor_floor() {
        assert_eq!(neighbor_count(6), 1);
        assert_eq!(neighbor_count(20), 1);
        assert_eq!(neighbor_count(21), 2);
        assert_eq!(neighbor_count(100), 5);
    }

    #[test]
    fn quality_examples() {
        let h = array![[10.0, 3.0]];
        assert_eq!(quality_indicator(&h, &h).unwrap(), array![[0.0, 0.0]]);
        let hc = array![[12.5, 3.0]];
        assert_eq!(quality_indicator(&h, &hc).unwrap()[[0, 0]], 2.5);
        assert_eq!(period_average(&[1.0, 3.0]), 2.0);
        assert!(quality_indicator(&h, &array![[1.0]]).is_err());
    }

    #[test]
    fn intra_period_oracle_value() {
        // p = 3, one period per layer, region 0 holds [2, 4, 6]
        let window =
            Array3::from_shape_fn(
                (2, 3, 2),
                |(_, j, i)| if i == 0 { 2.0 * (j + 1) as f64 } else { 0.0 },
            );
        let nb = NeighborSet::from_lists(vec![vec![1], vec![0]]);
        let views = variance_views(&window, &nb);
        assert!((views.var_ip[[0, 0]] - (8.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((views.var_ip[[0, 0]] - 1.632993).abs() < 1e-6);
    }

    #[test]
    fn spatial_view_single_interval() {
        // p = 1, region 0 has neighbours holding {1, 3, 5}
        let vals = [0.0, 1.0, 3.0, 5.0];
        let window = Array3::from_shape_fn((2, 1, 4), |(_, _, i)| vals[i]);
        let nb = NeighborSet::from_lists(vec![vec![1, 2, 3], vec![0], vec![0], vec![0]]);
        let views = variance_views(&window, &nb);
        assert!((views.var_s[[0, 0]] - 1.632993).abs() < 1e-6);
        assert!(views.intra_degenerate);
        assert_eq!(views.var_ip, Array2::<f64>::zeros((2, 4)));
    }

    #[test]
    fn constant_window_has_zero_views() {
        let window = Array3::from_elem((4, 3, 5), 7.5);
        let g = UrbanGraph::new(
            (0..5).map(|i| i.to_string()).collect(),
            (0..5).map(|i| (i as f64, 0.0)).collect(),
        )
        .unwrap();
        let views = variance_views(&window, &NeighborSet::from_graph(&g));
        assert!(views.st_variance().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn st_variance_is_the_mean() {
        let one = Array2::from_elem((1, 1), 1.0);
        let v = st_variance(&one, &(&one * 2.0), &(&one * 3.0)).unwrap();
        assert_eq!(v[[0, 0]], 2.0);
        let z = Array2::zeros((2, 2));
        assert_eq!(st_variance(&z, &z, &z).unwrap(), z);
    }

    #[test]
    fn target_variance_matches_shifted_window() {
        let ipd = 4;
        let (p, q) = (2, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tensor = Array2::from_shape_fn((7 * ipd + 6, 3), |_| rng.gen_range(0.0..10.0));
        let nb = NeighborSet::from_lists(vec![vec![1], vec![2], vec![0]]);
        let last = 7 * ipd + 3;
        let tv = target_variance(&tensor, &nb, last, p, q, ipd).unwrap();

        let shifted = build_period_stack(last + 1, p, q, ipd).unwrap();
        let o = oracle_st_variance(&tensor, nb.lists(), shifted.layout());
        for i in 0..3 {
            assert!((tv[i] - o.var_st[q + 1][i]).abs() < 1e-12);
        }
        assert!(target_variance(&tensor, &nb, tensor.nrows() - 1, p, q, ipd).is_err());
    }

    #[test]
    fn target_variance_constant_is_zero() {
        let tensor = Array2::from_elem((40, 2), 3.0);
        let nb = NeighborSet::from_lists(vec![vec![1], vec![0]]);
        let tv = target_variance(&tensor, &nb, 35, 1, 1, 4).unwrap();
        assert!(tv.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_constant_neighbour_gives_zero_spatial_view() {
        let window = Array3::from_shape_fn(
            (3, 2, 2),
            |(m, j, i)| if i == 1 { 4.0 } else { (m + j) as f64 },
        );
        let nb = NeighborSet::from_lists(vec![vec![1], vec![0]]);
        let views = variance_views(&window, &nb);
        assert!(views.var_s.row(0).iter().all(|&v| v == 0.0));
    }

    proptest! {
        #[test]
        fn scale_and_shift(
            seed in any::<u64>(),
            c in 0.0f64..20.0,
            shift in -50.0f64..50.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let window = Array3::from_shape_fn((4, 3, 5), |_| rng.gen_range(0.0..100.0));
            let nb = NeighborSet::from_lists((0..5).map(|i| vec![(i + 1) % 5, (i + 2) % 5]).collect());
            let base = variance_views(&window, &nb);
            let scaled = variance_views(&window.mapv(|v| v * c), &nb);
            let moved = variance_views(&window.mapv(|v| v + shift), &nb);
            let close = |a: &Array2<f64>, b: &Array2<f64>| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-9 * (1.0 + x.abs()));
            prop_assert!(close(&scaled.st_variance(), &(base.st_variance() * c)));
            prop_assert!(close(&moved.st_variance(), &base.st_variance()));
            prop_assert!(close(&moved.var_s, &base.var_s));

            let clean = window.index_axis(Axis(0), 0).to_owned();
            let corrupted = clean.mapv(|v| v + rng.gen_range(-1.0..1.0));
            let q0 = quality_indicator(&clean, &corrupted).unwrap();
            let q1 = quality_indicator(&clean.mapv(|v| v + shift), &corrupted.mapv(|v| v + shift)).unwrap();
            prop_assert!(q0.iter().zip(&q1).all(|(a, b)| (a - b).abs() <= 1e-9));
        }
    }
}
