//! Discretized deterioration-rate model for one component class: crack-depth
//! state grids, Monte Carlo estimation of the yearly crack-growth transition
//! tables, and the inspection observation model.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_indexed, ExecMode};
use crate::rng::derived_rng;

/// Lower edge of the first interior crack bin (mm).
pub const MIN_CRACK_EDGE: f64 = 1e-4;

/// Fatigue crack-growth parameters for one component class.
///
/// `ln_c` is the (normally distributed) log of the crack-growth coefficient,
/// `s` the normally distributed stress range, `m` the deterministic growth
/// exponent and `n_cycles` the number of stress cycles per year. The initial
/// crack depth is exponential with mean `d0_mean`; a component fails when the
/// crack exceeds `d_crit` (through-thickness).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FatigueParams {
    pub ln_c_mean: f64,
    pub ln_c_sd: f64,
    pub s_mean: f64,
    pub s_sd: f64,
    pub m: f64,
    pub n_cycles: f64,
    pub d0_mean: f64,
    pub d_crit: f64,
    pub horizon_years: usize,
}

impl Default for FatigueParams {
    /// Parameter set used by the bundled experiment configurations.
    fn default() -> Self {
        FatigueParams {
            ln_c_mean: -35.2,
            ln_c_sd: 0.5,
            s_mean: 70.0,
            s_sd: 10.0,
            m: 3.5,
            n_cycles: 1e6,
            d0_mean: 1.0,
            d_crit: 20.0,
            horizon_years: 30,
        }
    }
}

impl FatigueParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.m > 2.0) {
            return Err(Error::InvalidArgument(format!("m must be > 2, got {}", self.m)));
        }
        if !(self.d_crit > 0.0) {
            return Err(Error::InvalidArgument("d_crit must be positive".into()));
        }
        if !(self.n_cycles > 0.0) {
            return Err(Error::InvalidArgument("n_cycles must be positive".into()));
        }
        if self.horizon_years < 1 {
            return Err(Error::InvalidArgument("horizon_years must be >= 1".into()));
        }
        if !(self.d0_mean > 0.0) {
            return Err(Error::InvalidArgument("d0_mean must be positive".into()));
        }
        Ok(())
    }
}

/// Crack-depth bin edges and deterioration-rate states.
///
/// Edges run `0, exp(linspace(ln MIN_CRACK_EDGE, ln d_crit, n_crack - 1)), inf`,
/// so the last bin `[d_crit, inf)` is the failure bin.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct StateGrids {
    /// The last edge is +inf, which JSON cannot represent as a number.
    #[serde(with = "edge_serde")]
    pub crack_edges: Vec<f64>,
    pub n_crack: usize,
    pub n_rate: usize,
}

/// Serializes bin edges with `"inf"`/`"-inf"` standing in for infinite
/// values, since JSON has no literal for them.
pub(crate) mod edge_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Edge {
        Finite(f64),
        Infinite(String),
    }

    pub fn serialize<S: Serializer>(edges: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let repr: Vec<Edge> = edges
            .iter()
            .map(|&e| {
                if e.is_finite() {
                    Edge::Finite(e)
                } else if e > 0.0 {
                    Edge::Infinite("inf".into())
                } else {
                    Edge::Infinite("-inf".into())
                }
            })
            .collect();
        repr.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let repr = Vec::<Edge>::deserialize(d)?;
        repr.into_iter()
            .map(|e| match e {
                Edge::Finite(v) => Ok(v),
                Edge::Infinite(s) if s == "inf" => Ok(f64::INFINITY),
                Edge::Infinite(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
                Edge::Infinite(s) => {
                    Err(serde::de::Error::custom(format!("unknown edge marker {s:?}")))
                }
            })
            .collect()
    }
}

impl StateGrids {
    pub fn failure_bin(&self) -> usize {
        self.n_crack - 1
    }

    /// Index of the bin containing crack depth `d`.
    pub fn bin_of(&self, d: f64) -> usize {
        if d >= *self.crack_edges.get(self.n_crack - 1).unwrap() {
            return self.failure_bin();
        }
        // edges[i] <= d < edges[i+1]
        match self.crack_edges[..self.n_crack].binary_search_by(|e| e.partial_cmp(&d).unwrap()) {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        }
    }

    pub fn validate(&self, d_crit: f64) -> Result<()> {
        if self.crack_edges.len() != self.n_crack + 1 {
            return Err(Error::ShapeMismatch("crack_edges length".into()));
        }
        if self.crack_edges[0] != 0.0 || !self.crack_edges[self.n_crack].is_infinite() {
            return Err(Error::InvalidArgument("edges must start at 0 and end at inf".into()));
        }
        for w in self.crack_edges.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::InvalidArgument("edges must be strictly increasing".into()));
            }
        }
        if (self.crack_edges[self.n_crack - 1] - d_crit).abs() > 1e-12 {
            return Err(Error::InvalidArgument("failure bin lower edge must equal d_crit".into()));
        }
        Ok(())
    }
}

/// Builds log-spaced crack bins and the deterioration-rate state set.
pub fn build_grids(params: &FatigueParams, n_crack: usize, n_rate: usize) -> Result<StateGrids> {
    params.validate()?;
    if n_crack < 3 {
        return Err(Error::InvalidArgument(
            "n_crack must be >= 3 (zero bin, one interior bin, failure bin)".into(),
        ));
    }
    if n_rate < 1 {
        return Err(Error::InvalidArgument("n_rate must be >= 1".into()));
    }
    let mut edges = Vec::with_capacity(n_crack + 1);
    edges.push(0.0);
    let lo = MIN_CRACK_EDGE.ln();
    let hi = params.d_crit.ln();
    let k = n_crack - 2; // number of log-space intervals between 1e-4 and d_crit
    for i in 0..=k {
        edges.push((lo + (hi - lo) * i as f64 / k as f64).exp());
    }
    // pin the failure edge exactly
    edges[n_crack - 1] = params.d_crit;
    edges.push(f64::INFINITY);
    let grids = StateGrids { crack_edges: edges, n_crack, n_rate };
    grids.validate(params.d_crit)?;
    Ok(grids)
}

/// One year of crack growth under the fracture-mechanics law.
///
/// Returns `+inf` when the growth integral blows up in finite time (the
/// bracketed base becomes non-positive).
pub fn deterministic_growth(d: f64, params: &FatigueParams, c: f64, s: f64) -> f64 {
    debug_assert!(d > 0.0);
    let m = params.m;
    let s = s.max(0.0);
    let base = (1.0 - m / 2.0) * c * s.powf(m) * std::f64::consts::PI.powf(m / 2.0) * params.n_cycles
        + d.powf(1.0 - m / 2.0);
    if base <= 0.0 {
        f64::INFINITY
    } else {
        base.powf(2.0 / (2.0 - m))
    }
}

/// Yearly crack-transition tables indexed by deterioration rate.
///
/// `crack_step[tau][i][j]` is the probability that a crack in bin `i` moves to
/// bin `j` over one year at rate state `tau` under the do-nothing action. The
/// failure bin is absorbing.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TransitionTables {
    pub crack_step: Vec<Vec<Vec<f64>>>,
    pub n_crack: usize,
    pub n_rate: usize,
    /// Number of simulated path transitions that informed each `(rate, bin)`
    /// row; sparsely visited rows lean on the within-bin fallback kernel.
    #[serde(default)]
    pub visits: Vec<Vec<u64>>,
}

impl TransitionTables {
    pub fn row(&self, rate: usize, bin: usize) -> &[f64] {
        &self.crack_step[rate][bin]
    }

    /// Rate advance under do-nothing: age by one year, capped at the last state.
    pub fn next_rate_do_nothing(&self, rate: usize) -> usize {
        (rate + 1).min(self.n_rate - 1)
    }

    /// Rate after a perfect repair.
    pub fn next_rate_repair(&self) -> usize {
        0
    }

    /// Checks that every row is a probability vector and that rows are
    /// stochastically monotone in the source bin (first-moment ordering).
    pub fn validate(&self) -> Result<()> {
        for tau in 0..self.n_rate {
            let mut prev_mean = f64::NEG_INFINITY;
            for i in 0..self.n_crack {
                let row = &self.crack_step[tau][i];
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > 1e-9 || row.iter().any(|&p| p < 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "transition row ({tau}, {i}) is not a probability vector (sum {sum})"
                    )));
                }
                let mean: f64 = row.iter().enumerate().map(|(j, &p)| j as f64 * p).sum();
                if mean < prev_mean - 1e-12 {
                    return Err(Error::InvalidArgument(format!(
                        "transition table at rate {tau} is not stochastically monotone at bin {i}"
                    )));
                }
                prev_mean = mean;
            }
        }
        Ok(())
    }
}

/// Draws a crack depth inside bin `i`: log-uniform over interior bins, a point
/// mass at `MIN_CRACK_EDGE / 2` for the first bin.
fn sample_within_bin<R: Rng>(grids: &StateGrids, bin: usize, rng: &mut R) -> f64 {
    if bin == 0 {
        return MIN_CRACK_EDGE / 2.0;
    }
    let lo = grids.crack_edges[bin].ln();
    let hi = grids.crack_edges[bin + 1].ln();
    (lo + rng.random::<f64>() * (hi - lo)).exp()
}

/// Number of path-simulation chunks; fixed so that per-chunk derived seeds
/// make the estimate independent of execution order.
const PATH_CHUNKS: usize = 64;

/// Monte Carlo draws behind each within-bin fallback kernel row.
const FALLBACK_SAMPLES: usize = 20_000;

/// Pseudo-count weight of the fallback kernel when blended with the
/// path-transition counts; negligible for well-visited rows, dominant for
/// rows the paths rarely reach.
const FALLBACK_PSEUDO_COUNT: f64 = 100.0;

/// Estimates the crack transition tables from full simulated deterioration
/// paths: each path draws its growth variables once, so the row for rate
/// state `tau` conditions on the component having reached its source bin at
/// age `tau`. This age conditioning is what lets the rate-indexed Markov
/// chain reproduce the continuous process's marginals; resampling the growth
/// variables every year instead systematically distorts the failure-time
/// distribution. `(rate, bin)` cells the paths rarely visit fall back to a
/// smoothed within-bin kernel with independently drawn growth variables.
///
/// The rate-0 row is the first-year growth of a freshly repaired component,
/// which is distributed like a newborn component's first year, so it shares
/// the year-1 transition counts.
pub fn estimate_crack_step(
    grids: &StateGrids,
    params: &FatigueParams,
    mc_samples: usize,
    seed: u64,
    mode: ExecMode,
) -> Result<TransitionTables> {
    if mc_samples < 10_000 {
        return Err(Error::InvalidArgument("mc_samples must be >= 10000".into()));
    }
    let n_crack = grids.n_crack;
    let n_rate = grids.n_rate;
    let failure = grids.failure_bin();
    let ln_c = Normal::new(params.ln_c_mean, params.ln_c_sd)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let s_dist = Normal::new(params.s_mean, params.s_sd)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;

    // (1) path transitions: one (C, S) draw per path, yearly growth, the
    // year number (capped at the last rate state) indexes the row
    let n_years = params.horizon_years.max(n_rate.saturating_sub(1)).max(1);
    let per_chunk = mc_samples.div_ceil(PATH_CHUNKS);
    let chunk_counts = map_indexed(mode, PATH_CHUNKS, |chunk| {
        let mut rng = derived_rng(seed, &[0x50415448, chunk as u64]); // path stream
        let mut counts = vec![vec![vec![0u64; n_crack]; n_crack]; n_rate];
        for _ in 0..per_chunk {
            let u: f64 = rng.random();
            let mut d = -params.d0_mean * (1.0 - u).ln();
            let c = ln_c.sample(&mut rng).exp();
            let s = s_dist.sample(&mut rng);
            let mut bin = grids.bin_of(d);
            for year in 1..=n_years {
                if bin == failure {
                    break;
                }
                d = deterministic_growth(d, params, c, s);
                let next = grids.bin_of(d);
                counts[year.min(n_rate - 1)][bin][next] += 1;
                bin = next;
            }
        }
        counts
    });
    let mut counts = vec![vec![vec![0u64; n_crack]; n_crack]; n_rate];
    for chunk in chunk_counts {
        for (t, plane) in chunk.into_iter().enumerate() {
            for (i, row) in plane.into_iter().enumerate() {
                for (j, c) in row.into_iter().enumerate() {
                    counts[t][i][j] += c;
                }
            }
        }
    }
    if n_rate > 1 {
        counts[0] = counts[1].clone();
    }

    // (2) blend with the within-bin fallback kernel and normalize
    let rows = map_indexed(mode, n_rate * n_crack, |cell| -> Result<(Vec<f64>, u64)> {
        let tau = cell / n_crack;
        let bin = cell % n_crack;
        if bin == failure {
            let mut row = vec![0.0; n_crack];
            row[failure] = 1.0;
            return Ok((row, 0));
        }
        let mut rng = derived_rng(seed, &[tau as u64, bin as u64]);
        let mut fallback = vec![0u64; n_crack];
        for _ in 0..FALLBACK_SAMPLES {
            let d = sample_within_bin(grids, bin, &mut rng);
            let c = ln_c.sample(&mut rng).exp();
            let s = s_dist.sample(&mut rng);
            fallback[grids.bin_of(deterministic_growth(d, params, c, s))] += 1;
        }
        let fb_total: u64 = fallback.iter().sum();
        if fb_total == 0 {
            return Err(Error::EmptyTransitionRow { rate: tau, bin });
        }
        let visited: u64 = counts[tau][bin].iter().sum();
        let denom = visited as f64 + FALLBACK_PSEUDO_COUNT;
        let row = (0..n_crack)
            .map(|j| {
                (counts[tau][bin][j] as f64
                    + FALLBACK_PSEUDO_COUNT * fallback[j] as f64 / fb_total as f64)
                    / denom
            })
            .collect();
        Ok((row, visited))
    });

    let mut crack_step = vec![Vec::with_capacity(n_crack); n_rate];
    let mut visits = vec![Vec::with_capacity(n_crack); n_rate];
    for (cell, row) in rows.into_iter().enumerate() {
        let (row, visited) = row?;
        crack_step[cell / n_crack].push(row);
        visits[cell / n_crack].push(visited);
    }
    Ok(TransitionTables { crack_step, n_crack, n_rate, visits })
}

/// Inspection model: per-bin detection probabilities from an exponential
/// probability-of-detection curve with mean `pod_mean`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ObservationModel {
    pub pod_mean: f64,
    pub detect_prob_per_bin: Vec<f64>,
}

impl ObservationModel {
    /// Continuous detection probability at a true crack depth.
    pub fn pod(&self, d: f64) -> f64 {
        if d <= 0.0 {
            0.0
        } else {
            1.0 - (-d / self.pod_mean).exp()
        }
    }
}

/// Mean of `1 - exp(-d / pod_mean)` over `[lo, hi]` under the log-uniform
/// within-bin density (midpoint rule in log space; exact for degenerate bins).
pub fn mean_pod_log_uniform(lo: f64, hi: f64, pod_mean: f64) -> f64 {
    if hi <= lo {
        return 1.0 - (-lo / pod_mean).exp();
    }
    let (a, b) = (lo.ln(), hi.ln());
    let n = 2048;
    let h = (b - a) / n as f64;
    let mut acc = 0.0;
    for i in 0..n {
        let d = (a + (i as f64 + 0.5) * h).exp();
        acc += 1.0 - (-d / pod_mean).exp();
    }
    acc / n as f64
}

/// Builds the per-bin detection model matching the within-bin sampling rule of
/// [`estimate_crack_step`]. The failure bin always yields a detection.
pub fn build_observation_model(grids: &StateGrids, pod_mean: f64) -> Result<ObservationModel> {
    if !(pod_mean > 0.0) {
        return Err(Error::InvalidArgument("pod_mean must be positive".into()));
    }
    let mut detect = Vec::with_capacity(grids.n_crack);
    for bin in 0..grids.n_crack {
        let p = if bin == grids.failure_bin() {
            1.0
        } else if bin == 0 {
            let d = MIN_CRACK_EDGE / 2.0;
            1.0 - (-d / pod_mean).exp()
        } else {
            mean_pod_log_uniform(grids.crack_edges[bin], grids.crack_edges[bin + 1], pod_mean)
        };
        detect.push(p);
    }
    Ok(ObservationModel { pod_mean, detect_prob_per_bin: detect })
}

/// The full discretized deterioration model for one component class.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DeteriorationModel {
    pub params: FatigueParams,
    pub grids: StateGrids,
    pub tables: TransitionTables,
    pub observation: ObservationModel,
    pub mc_samples: usize,
    pub seed: u64,
}

impl DeteriorationModel {
    /// Builds grids, transition tables and observation model in one pass.
    pub fn build(
        params: FatigueParams,
        n_crack: usize,
        n_rate: usize,
        mc_samples: usize,
        pod_mean: f64,
        seed: u64,
        mode: ExecMode,
    ) -> Result<Self> {
        let grids = build_grids(&params, n_crack, n_rate)?;
        let tables = estimate_crack_step(&grids, &params, mc_samples, seed, mode)?;
        let observation = build_observation_model(&grids, pod_mean)?;
        Ok(DeteriorationModel { params, grids, tables, observation, mc_samples, seed })
    }

    /// Discretized exponential initial crack prior.
    pub fn initial_prior(&self) -> Vec<f64> {
        exponential_bin_masses(&self.grids, self.params.d0_mean)
    }
}

/// Bin masses of an exponential crack-depth distribution on the given grid.
pub fn exponential_bin_masses(grids: &StateGrids, mean: f64) -> Vec<f64> {
    let cdf = |d: f64| {
        if d.is_infinite() {
            1.0
        } else {
            1.0 - (-d / mean).exp()
        }
    };
    (0..grids.n_crack)
        .map(|i| cdf(grids.crack_edges[i + 1]) - cdf(grids.crack_edges[i]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params() -> FatigueParams {
        FatigueParams::default()
    }

    #[test]
    fn grid_edges_match_log_spacing_rule() {
        let g = build_grids(&params(), 30, 31).unwrap();
        assert_eq!(g.crack_edges.len(), 31);
        assert_eq!(g.crack_edges[0], 0.0);
        assert_relative_eq!(g.crack_edges[1], 1e-4, max_relative = 1e-12);
        assert_relative_eq!(g.crack_edges[29], 20.0, max_relative = 1e-12);
        assert!(g.crack_edges[30].is_infinite());
        // interior log-spacing step
        let step = (20f64.ln() - 1e-4f64.ln()) / 28.0;
        for i in 1..29 {
            assert_relative_eq!(
                g.crack_edges[i + 1].ln() - g.crack_edges[i].ln(),
                step,
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn minimal_grid_has_forced_endpoints() {
        let g = build_grids(&params(), 3, 2).unwrap();
        assert_eq!(g.crack_edges[0], 0.0);
        assert_relative_eq!(g.crack_edges[1], 1e-4, max_relative = 1e-12);
        assert_relative_eq!(g.crack_edges[2], 20.0, max_relative = 1e-12);
        assert!(g.crack_edges[3].is_infinite());
    }

    #[test]
    fn grid_rejects_too_few_bins() {
        assert!(build_grids(&params(), 2, 2).is_err());
    }

    #[test]
    fn bin_lookup_brackets_one_millimetre() {
        let g = build_grids(&params(), 30, 31).unwrap();
        // independent evaluation of the edge formula: the bin whose edges
        // bracket d = 1 mm has index floor((ln 1 - ln 1e-4) / step) + 1
        let step = (20f64.ln() - 1e-4f64.ln()) / 28.0;
        let expect = ((1.0f64.ln() - 1e-4f64.ln()) / step).floor() as usize + 1;
        let bin = g.bin_of(1.0);
        assert_eq!(bin, expect);
        assert!(g.crack_edges[bin] <= 1.0 && 1.0 < g.crack_edges[bin + 1]);
        assert_eq!(g.bin_of(0.0), 0);
        assert_eq!(g.bin_of(25.0), g.failure_bin());
        assert_eq!(g.bin_of(f64::INFINITY), g.failure_bin());
    }

    #[test]
    fn growth_law_matches_scalar_evaluation() {
        let p = params();
        let d = deterministic_growth(1.0, &p, (-35.2f64).exp(), 70.0);
        assert_relative_eq!(d, 1.011, epsilon = 5e-4);
    }

    #[test]
    fn growth_with_zero_coefficient_is_identity() {
        let p = params();
        assert_relative_eq!(deterministic_growth(1.0, &p, 0.0, 70.0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn growth_blowup_returns_infinity() {
        let p = params();
        // base <= 0 requires C * S^m * pi^{m/2} * n * (m/2 - 1) >= d^{1-m/2}
        let d = deterministic_growth(1.0, &p, 1.0, 70.0);
        assert!(d.is_infinite());
    }

    #[test]
    fn transition_rows_are_probability_vectors() {
        let p = params();
        let g = build_grids(&p, 10, 4).unwrap();
        let t = estimate_crack_step(&g, &p, 10_000, 7, ExecMode::Sequential).unwrap();
        t.validate().unwrap();
        // absorbing failure bin
        let f = g.failure_bin();
        assert_eq!(t.crack_step[0][f][f], 1.0);
    }

    #[test]
    fn transition_estimation_is_order_independent() {
        let p = params();
        let g = build_grids(&p, 6, 3).unwrap();
        let a = estimate_crack_step(&g, &p, 10_000, 3, ExecMode::Sequential).unwrap();
        let b = estimate_crack_step(&g, &p, 10_000, 3, ExecMode::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mass_stays_near_source_bin_at_mean_growth() {
        // growth from ~1 mm is about 1% per year at the parameter means, so
        // nearly all mass stays within the source bin or its neighbour
        let p = params();
        let g = build_grids(&p, 30, 31).unwrap();
        let t = estimate_crack_step(&g, &p, 100_000, 11, ExecMode::default()).unwrap();
        let bin = g.bin_of(1.0);
        let row = t.row(0, bin);
        let near: f64 = row[bin..=(bin + 1).min(g.n_crack - 1)].iter().sum();
        assert!(near > 0.95, "mass near source bin was {near}");
    }

    #[test]
    fn doubling_samples_changes_entries_within_mc_error() {
        let p = params();
        let g = build_grids(&p, 8, 3).unwrap();
        let t1 = estimate_crack_step(&g, &p, 50_000, 5, ExecMode::default()).unwrap();
        let t2 = estimate_crack_step(&g, &p, 100_000, 6, ExecMode::default()).unwrap();
        for tau in 0..g.n_rate {
            for i in 0..g.n_crack {
                // effective evidence behind each row: path visits plus the
                // fallback pseudo-count
                let n1 = t1.visits[tau][i] as f64 + 100.0;
                let n2 = t2.visits[tau][i] as f64 + 100.0;
                for j in 0..g.n_crack {
                    let p1 = t1.crack_step[tau][i][j];
                    let p2 = t2.crack_step[tau][i][j];
                    let pm = p1.max(p2);
                    let se = (pm * (1.0 - pm).max(0.0) * (1.0 / n1 + 1.0 / n2)).sqrt();
                    assert!(
                        (p1 - p2).abs() <= 3.0 * se.max(3e-3),
                        "entry ({tau},{i},{j}): {p1} vs {p2}"
                    );
                }
            }
        }
    }

    #[test]
    fn observation_model_detection_probabilities() {
        let p = params();
        let g = build_grids(&p, 30, 31).unwrap();
        let o = build_observation_model(&g, 8.0).unwrap();
        // degenerate bin exactly at the PoD mean
        assert_relative_eq!(mean_pod_log_uniform(8.0, 8.0, 8.0), 1.0 - (-1f64).exp(), epsilon = 1e-12);
        // tiny cracks are essentially undetectable
        assert!(o.detect_prob_per_bin[0] < 1e-4);
        // failure bin forced to 1
        assert_eq!(o.detect_prob_per_bin[g.failure_bin()], 1.0);
        // monotone non-decreasing
        for w in o.detect_prob_per_bin.windows(2) {
            assert!(w[1] >= w[0] - 1e-12);
        }
        assert!(o.detect_prob_per_bin.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn exponential_prior_sums_to_one_with_closed_form_tail() {
        let p = params();
        let g = build_grids(&p, 30, 31).unwrap();
        let prior = exponential_bin_masses(&g, 1.0);
        assert_relative_eq!(prior.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(prior[g.failure_bin()], (-20f64).exp(), max_relative = 1e-9);
    }
}
