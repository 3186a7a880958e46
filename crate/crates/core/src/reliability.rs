//! System-level reliability: k-out-of-n series/parallel logic over component
//! failure probabilities, structural frames with hotspot-to-element mapping
//! and pushover resistance tables, single-element importance, and annual risk
//! costs.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, LogNormal};

use crate::error::{Error, Result};
use crate::exec::{map_indexed, ExecMode};
use crate::rng::derived_rng;
use rand::Rng;

/// Maximum number of elements for exact enumeration over element states.
pub const MAX_ELEMENTS: usize = 24;

/// Probability that a system requiring at least `k` of `n` components
/// functional has failed, given independent per-component failure
/// probabilities.
///
/// Computed by dynamic programming over the survivor-count distribution;
/// exact in O(n^2).
pub fn k_out_of_n_failure(p_fail: &[f64], k: usize) -> Result<f64> {
    let n = p_fail.len();
    if k > n {
        return Err(Error::InvalidArgument(format!(
            "k-out-of-n requires k <= n (k={k}, n={n})"
        )));
    }
    for (i, &p) in p_fail.iter().enumerate() {
        if !(0.0..=1.0).contains(&p) || p.is_nan() {
            return Err(Error::InvalidArgument(format!(
                "component {i} failure probability {p} outside [0, 1]"
            )));
        }
    }
    // dp[s] = Pr(s survivors among components processed so far)
    let mut dp = vec![0.0f64; n + 1];
    dp[0] = 1.0;
    for (i, &p) in p_fail.iter().enumerate() {
        let q = 1.0 - p;
        for s in (0..=i).rev() {
            let v = dp[s];
            dp[s + 1] += v * q;
            dp[s] = v * p;
        }
    }
    // system fails when fewer than k survive
    Ok(dp[..k].iter().sum::<f64>().min(1.0))
}

/// Joint distribution over element survival patterns under independence,
/// indexed by survival bitmask.
///
/// Element 0 corresponds to the most significant bit; each subsequent
/// element is appended as the least significant bit. Bit value 0 means
/// "failed", 1 means "survived", so mask 0 is the all-failed pattern and the
/// all-ones mask is intact. For `p_fail = [0.1, 0.2]` the result is
/// `[0.02, 0.08, 0.18, 0.72]`.
pub fn element_state_distribution(p_fail: &[f64]) -> Result<Vec<f64>> {
    let n = p_fail.len();
    if n > MAX_ELEMENTS {
        return Err(Error::Capacity { n_elements: n, limit: MAX_ELEMENTS });
    }
    let mut q = vec![1.0f64];
    for &p in p_fail {
        if !(0.0..=1.0).contains(&p) || p.is_nan() {
            return Err(Error::InvalidArgument(format!(
                "failure probability {p} outside [0, 1]"
            )));
        }
        let mut next = vec![0.0; q.len() * 2];
        for (j, &v) in q.iter().enumerate() {
            next[2 * j] = v * p;
            next[2 * j + 1] = v * (1.0 - p);
        }
        q = next;
    }
    Ok(q)
}

/// Element failure probability as a series system over its hotspots:
/// the element fails if any of its hotspots has failed.
pub fn element_failure_from_hotspots(
    hotspot_p_fail: &[f64],
    hotspots_of_element: &[usize],
) -> Result<f64> {
    let mut survive = 1.0f64;
    for &h in hotspots_of_element {
        let p = *hotspot_p_fail.get(h).ok_or_else(|| {
            Error::InvalidArgument(format!("hotspot index {h} out of range"))
        })?;
        if !(0.0..=1.0).contains(&p) || p.is_nan() {
            return Err(Error::InvalidArgument(format!(
                "hotspot {h} failure probability {p} outside [0, 1]"
            )));
        }
        survive *= 1.0 - p;
    }
    Ok(1.0 - survive)
}

/// Pushover resistance table: collapse load capacity of the frame for every
/// element survival pattern.
///
/// Masks follow the [`element_state_distribution`] convention (element 0 =
/// most significant bit, bit value 0 = failed).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResistanceTable {
    pub n_elements: usize,
    /// Collapse load per mask, in kN; length `2^n_elements`.
    pub collapse_load_kn: Vec<f64>,
}

impl ResistanceTable {
    pub fn validate(&self) -> Result<()> {
        if self.n_elements > MAX_ELEMENTS {
            return Err(Error::Capacity { n_elements: self.n_elements, limit: MAX_ELEMENTS });
        }
        let want = 1usize << self.n_elements;
        if self.collapse_load_kn.len() != want {
            return Err(Error::ResistanceTable(format!(
                "expected {want} entries for {} elements, found {}",
                self.n_elements,
                self.collapse_load_kn.len()
            )));
        }
        for (mask, &l) in self.collapse_load_kn.iter().enumerate() {
            if !l.is_finite() || l < 0.0 {
                return Err(Error::ResistanceTable(format!(
                    "non-finite or negative collapse load {l} at mask {mask:#x}"
                )));
            }
        }
        // monotonicity: removing an element (clearing its survival bit)
        // cannot raise capacity
        for mask in 0..want {
            for e in 0..self.n_elements {
                let bit = 1usize << (self.n_elements - 1 - e);
                if mask & bit != 0 {
                    let worse = mask & !bit;
                    if self.collapse_load_kn[worse] > self.collapse_load_kn[mask] + 1e-9 {
                        return Err(Error::ResistanceTable(format!(
                            "capacity increases when element {e} fails (mask {mask:#x} -> {worse:#x})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Reads the text format: a header line `n_elements = N`, then one line
    /// per damage pattern `bitmask_hex, L_col_kN`. Missing masks are an
    /// error; `#` starts a comment.
    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut n_elements: Option<usize> = None;
        let mut loads: Vec<Option<f64>> = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("n_elements") {
                let rest = rest.trim_start().strip_prefix('=').ok_or_else(|| {
                    Error::ResistanceTable(format!("line {}: malformed header", lineno + 1))
                })?;
                let n: usize = rest.trim().parse().map_err(|_| {
                    Error::ResistanceTable(format!("line {}: bad element count", lineno + 1))
                })?;
                if n > MAX_ELEMENTS {
                    return Err(Error::Capacity { n_elements: n, limit: MAX_ELEMENTS });
                }
                n_elements = Some(n);
                loads = vec![None; 1usize << n];
                continue;
            }
            let n = n_elements.ok_or_else(|| {
                Error::ResistanceTable("data row before n_elements header".into())
            })?;
            let mut parts = line.splitn(2, ',');
            let mask_str = parts.next().unwrap().trim();
            let load_str = parts.next().ok_or_else(|| {
                Error::ResistanceTable(format!("line {}: missing load column", lineno + 1))
            })?;
            let mask_str = mask_str.trim_start_matches("0x").trim_start_matches("0X");
            let mask = usize::from_str_radix(mask_str, 16).map_err(|_| {
                Error::ResistanceTable(format!("line {}: bad bitmask", lineno + 1))
            })?;
            if mask >= (1usize << n) {
                return Err(Error::ResistanceTable(format!(
                    "line {}: mask {mask:#x} out of range for {n} elements",
                    lineno + 1
                )));
            }
            let load: f64 = load_str.trim().parse().map_err(|_| {
                Error::ResistanceTable(format!("line {}: bad load value", lineno + 1))
            })?;
            if loads[mask].is_some() {
                return Err(Error::ResistanceTable(format!(
                    "line {}: duplicate mask {mask:#x}",
                    lineno + 1
                )));
            }
            loads[mask] = Some(load);
        }
        let n = n_elements
            .ok_or_else(|| Error::ResistanceTable("missing n_elements header".into()))?;
        let collapse_load_kn = loads
            .into_iter()
            .enumerate()
            .map(|(mask, l)| l.ok_or_else(|| Error::ResistanceTable(format!("missing mask {mask:#x}"))))
            .collect::<Result<Vec<_>>>()?;
        let table = ResistanceTable { n_elements: n, collapse_load_kn };
        table.validate()?;
        Ok(table)
    }

    pub fn read_file<P: AsRef<Path>>(path: P) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(f))
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "n_elements = {}", self.n_elements)?;
        for (mask, load) in self.collapse_load_kn.iter().enumerate() {
            writeln!(w, "{mask:x}, {load}")?;
        }
        Ok(())
    }

    pub fn write_file<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        self.write(&mut f)
    }
}

/// Environmental load acting on the frame, lognormal in kN.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LoadModel {
    pub mean_kn: f64,
    pub cov: f64,
}

impl Default for LoadModel {
    fn default() -> Self {
        LoadModel { mean_kn: 70.0, cov: 0.25 }
    }
}

impl LoadModel {
    /// Lognormal parameters (mu, sigma) matching the given mean and
    /// coefficient of variation.
    pub fn lognormal_params(&self) -> (f64, f64) {
        let sigma2 = (1.0 + self.cov * self.cov).ln();
        let mu = self.mean_kn.ln() - 0.5 * sigma2;
        (mu, sigma2.sqrt())
    }

    /// Probability the annual-extreme load exceeds capacity `l_col` kN.
    pub fn exceedance(&self, l_col: f64) -> f64 {
        if l_col <= 0.0 {
            return 1.0;
        }
        let (mu, sigma) = self.lognormal_params();
        let dist = LogNormal::new(mu, sigma).expect("valid lognormal");
        1.0 - dist.cdf(l_col)
    }
}

/// Frame system model: hotspots aggregate into structural elements; the
/// system fails when the load exceeds the pushover capacity of the realized
/// damage pattern.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FrameSystem {
    /// `hotspots_of_element[e]` lists the hotspot indices on element `e`.
    pub hotspots_of_element: Vec<Vec<usize>>,
    pub resistance: ResistanceTable,
    pub load: LoadModel,
}

impl FrameSystem {
    pub fn validate(&self, n_hotspots: usize) -> Result<()> {
        if self.hotspots_of_element.len() != self.resistance.n_elements {
            return Err(Error::ShapeMismatch(format!(
                "{} element hotspot lists vs {} table elements",
                self.hotspots_of_element.len(),
                self.resistance.n_elements
            )));
        }
        for (e, hs) in self.hotspots_of_element.iter().enumerate() {
            if hs.is_empty() {
                return Err(Error::InvalidArgument(format!("element {e} has no hotspots")));
            }
            for &h in hs {
                if h >= n_hotspots {
                    return Err(Error::InvalidArgument(format!(
                        "element {e} references hotspot {h} >= {n_hotspots}"
                    )));
                }
            }
        }
        self.resistance.validate()
    }

    /// Element failure probabilities from hotspot failure probabilities.
    pub fn element_failure_probs(&self, hotspot_p_fail: &[f64]) -> Result<Vec<f64>> {
        self.hotspots_of_element
            .iter()
            .map(|hs| element_failure_from_hotspots(hotspot_p_fail, hs))
            .collect()
    }

    /// System failure probability: expectation over element damage patterns
    /// of the load exceedance probability at the pattern's capacity.
    pub fn system_failure_prob(&self, hotspot_p_fail: &[f64]) -> Result<f64> {
        let p_elem = self.element_failure_probs(hotspot_p_fail)?;
        let q = element_state_distribution(&p_elem)?;
        let mut p = 0.0;
        for (mask, &w) in q.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            p += w * self.load.exceedance(self.resistance.collapse_load_kn[mask]);
        }
        Ok(p.min(1.0))
    }

    /// Single-element importance of a hotspot: increase in system failure
    /// probability when that hotspot is forced failed, relative to the
    /// baseline at the given hotspot failure probabilities.
    pub fn single_element_importance(&self, hotspot_p_fail: &[f64], hotspot: usize) -> Result<f64> {
        if hotspot >= hotspot_p_fail.len() {
            return Err(Error::InvalidArgument(format!("hotspot index {hotspot} out of range")));
        }
        let baseline = self.system_failure_prob(hotspot_p_fail)?;
        let mut forced = hotspot_p_fail.to_vec();
        forced[hotspot] = 1.0;
        let degraded = self.system_failure_prob(&forced)?;
        Ok(degraded - baseline)
    }

    /// Importance of every hotspot, evaluated in the requested execution
    /// mode.
    pub fn importance_ranking(&self, hotspot_p_fail: &[f64], mode: ExecMode) -> Result<Vec<f64>> {
        let results = map_indexed(mode, hotspot_p_fail.len(), |h| {
            self.single_element_importance(hotspot_p_fail, h)
        });
        results.into_iter().collect()
    }

    /// Monte Carlo estimate of the system failure probability, for
    /// cross-checking the exact enumeration. Returns (estimate, std error).
    pub fn system_failure_prob_mc(
        &self,
        hotspot_p_fail: &[f64],
        n_samples: usize,
        seed: u64,
    ) -> Result<(f64, f64)> {
        let p_elem = self.element_failure_probs(hotspot_p_fail)?;
        let n = self.resistance.n_elements;
        let (mu, sigma) = self.load.lognormal_params();
        let mut rng = derived_rng(seed, &[0x46524d43]); // "FRMC"
        let mut fails = 0usize;
        for _ in 0..n_samples {
            let mut mask = 0usize;
            for (e, &p) in p_elem.iter().enumerate() {
                if rng.random::<f64>() >= p {
                    mask |= 1usize << (n - 1 - e);
                }
            }
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            let load = (mu + sigma * z).exp();
            if load > self.resistance.collapse_load_kn[mask] {
                fails += 1;
            }
        }
        let p = fails as f64 / n_samples as f64;
        let se = (p * (1.0 - p) / n_samples as f64).sqrt();
        Ok((p, se))
    }
}

/// System-level reliability logic: either a k-out-of-n arrangement over the
/// hotspots themselves, or a structural frame with hotspot-to-element mapping
/// and a pushover resistance table.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemModel {
    KOutOfN { k: usize, n: usize },
    Frame(FrameSystem),
}

impl SystemModel {
    pub fn validate(&self, n_hotspots: usize) -> Result<()> {
        match self {
            SystemModel::KOutOfN { k, n } => {
                if *k < 1 || k > n {
                    return Err(Error::InvalidArgument(format!(
                        "k-out-of-n requires 1 <= k <= n (k={k}, n={n})"
                    )));
                }
                if *n != n_hotspots {
                    return Err(Error::ShapeMismatch(format!(
                        "system size {n} vs {n_hotspots} hotspots"
                    )));
                }
                Ok(())
            }
            SystemModel::Frame(f) => f.validate(n_hotspots),
        }
    }

    /// System failure probability from per-hotspot failure probabilities.
    pub fn system_failure_prob(&self, hotspot_p_fail: &[f64]) -> Result<f64> {
        match self {
            SystemModel::KOutOfN { k, .. } => k_out_of_n_failure(hotspot_p_fail, *k),
            SystemModel::Frame(f) => f.system_failure_prob(hotspot_p_fail),
        }
    }
}

/// Annual risk cost of system failure between two epochs: the increment of
/// the cumulative system failure probability times the failure cost
/// (negative reward).
pub fn annual_risk(p_sys_next: f64, p_sys_now: f64, r_failure: f64) -> f64 {
    (p_sys_next - p_sys_now) * r_failure
}

/// Synthetic pushover table for a braced frame with `n_elements` elements:
/// intact capacity `intact_kn`, multiplicative knockdown per failed element
/// (`knockdown[e]` in (0, 1]), capped below by `floor_kn`. Deterministic and
/// monotone by construction.
pub fn synthetic_resistance_table(
    n_elements: usize,
    intact_kn: f64,
    knockdown: &[f64],
    floor_kn: f64,
) -> Result<ResistanceTable> {
    if knockdown.len() != n_elements {
        return Err(Error::ShapeMismatch(format!(
            "{} knockdown factors for {n_elements} elements",
            knockdown.len()
        )));
    }
    if n_elements > MAX_ELEMENTS {
        return Err(Error::Capacity { n_elements, limit: MAX_ELEMENTS });
    }
    for (e, &k) in knockdown.iter().enumerate() {
        if !(0.0..=1.0).contains(&k) || k == 0.0 {
            return Err(Error::InvalidArgument(format!(
                "knockdown factor {k} for element {e} outside (0, 1]"
            )));
        }
    }
    let size = 1usize << n_elements;
    let mut loads = vec![0.0; size];
    for (mask, load) in loads.iter_mut().enumerate() {
        let mut l = intact_kn;
        for (e, &k) in knockdown.iter().enumerate() {
            // a cleared survival bit means the element has failed
            if mask & (1usize << (n_elements - 1 - e)) == 0 {
                l *= k;
            }
        }
        *load = l.max(floor_kn);
    }
    let table = ResistanceTable { n_elements, collapse_load_kn: loads };
    table.validate()?;
    Ok(table)
}

/// A small demonstration frame: three elements with two hotspots each,
/// generous intact capacity and distinct knockdowns so importance ordering
/// is strict.
pub fn demo_frame() -> FrameSystem {
    let resistance =
        synthetic_resistance_table(3, 190.0, &[0.45, 0.65, 0.85], 10.0).expect("valid demo table");
    FrameSystem {
        hotspots_of_element: vec![vec![0, 1], vec![2, 3], vec![4, 5]],
        resistance,
        load: LoadModel::default(),
    }
}

/// A 13-element, 22-hotspot braced-frame layout patterned after offshore
/// jacket pushover studies: four legs (two hotspots each, mild knockdown),
/// eight braces (one or two hotspots, strong knockdown for lower bays), and
/// a deck girder.
pub fn synthetic_jacket_frame() -> FrameSystem {
    let knockdown = [
        // legs
        0.80, 0.80, 0.80, 0.80,
        // lower-bay braces (most load-bearing)
        0.55, 0.55, 0.60, 0.60,
        // upper-bay braces
        0.75, 0.75, 0.80, 0.80,
        // deck girder
        0.90,
    ];
    let resistance =
        synthetic_resistance_table(13, 260.0, &knockdown, 5.0).expect("valid jacket table");
    FrameSystem {
        hotspots_of_element: vec![
            vec![0, 1],
            vec![2, 3],
            vec![4, 5],
            vec![6, 7],
            vec![8, 9],
            vec![10, 11],
            vec![12],
            vec![13],
            vec![14, 15],
            vec![16, 17],
            vec![18],
            vec![19],
            vec![20, 21],
        ],
        resistance,
        load: LoadModel::default(),
    }
}
