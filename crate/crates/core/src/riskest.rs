//! Per-subclass risk estimators and density-ratio weights.
//!
//! The per-subclass risk of a fixed model can be estimated without subclass
//! labels by reweighting superclass examples with `w(x, c) = p(x | z = c) /
//! p(x | y = S(c))`. The reweighted average is unbiased for the per-subclass
//! average risk and the weight never exceeds the inverse minimum subclass
//! proportion, which this module enforces as a clamp. Plug-in weights come
//! from per-superclass Gaussian mixtures fitted with EM.

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::gmm_em;
use crate::error::{Error, Result};
use crate::gaussian::{GaussianMixture, SampleDensity};
use crate::linalg::{least_squares_line, logsumexp};
use crate::models::{Classifier, ModelConfig};
use crate::rng::{derive_seed, seeded_rng};
use crate::synthgen::{lemma1_spec, sample_dataset, Dataset, GenerativeSpec, ZUse};

/// Per-superclass fitted mixtures, with global component ids laid out in
/// superclass blocks (component c of superclass b has id offsets[b] + c).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GmmEstimate {
    pub mixtures: Vec<GaussianMixture>,
    /// Empirical superclass frequencies.
    pub superclass_marginals: Vec<f64>,
    pub offsets: Vec<usize>,
    /// Superclass of each global component id.
    pub component_supers: Vec<usize>,
    /// Minimum estimated subclass proportion: min over components of
    /// component weight times superclass marginal.
    pub pi_min_hat: f64,
}

impl GmmEstimate {
    pub fn n_components(&self) -> usize {
        self.component_supers.len()
    }

    fn locate(&self, global: usize) -> Result<(usize, usize)> {
        if global >= self.n_components() {
            return Err(Error::invalid(format!(
                "component {global} out of range ({} total)",
                self.n_components()
            )));
        }
        let b = self.component_supers[global];
        Ok((b, global - self.offsets[b]))
    }

    /// Estimated p(z = c | y = S(c)) for a global component id.
    pub fn component_weight_in_superclass(&self, global: usize) -> Result<f64> {
        let (b, j) = self.locate(global)?;
        Ok(self.mixtures[b].weights()[j])
    }
}

/// Density-ratio weight from an explicit superclass mixture: the component's
/// density over the mixture density, clamped to [0, clamp]. The boolean marks
/// a numerically vanished denominator, in which case the clamp ceiling is
/// returned.
fn weight_from_mixture(
    mixture: &GaussianMixture,
    component: usize,
    x: &ArrayView1<f64>,
    clamp: f64,
) -> Result<(f64, bool)> {
    let logs = mixture.component_log_densities(x)?;
    let weighted: Vec<f64> = logs
        .iter()
        .zip(mixture.weights().iter())
        .map(|(&l, &w)| if w > 0.0 { w.ln() + l } else { f64::NEG_INFINITY })
        .collect();
    let log_den = logsumexp(&weighted);
    if !log_den.is_finite() {
        return Ok((clamp, true));
    }
    let w = (logs[component] - log_den).exp();
    Ok((w.min(clamp).max(0.0), false))
}

/// w(x, c) under the true generative distribution, clamped to 1/pi_min.
pub fn true_weight(spec: &GenerativeSpec, x: &ArrayView1<f64>, c: usize) -> Result<(f64, bool)> {
    if c >= spec.n_subclasses() {
        return Err(Error::invalid(format!("subclass {c} does not exist")));
    }
    let b = spec.subclass_supers()[c];
    let mixture = spec.superclass_mixture(b)?;
    let local = spec
        .subclasses_of(b)
        .iter()
        .position(|&s| s == c)
        .expect("subclass belongs to its superclass");
    weight_from_mixture(&mixture, local, x, 1.0 / spec.pi_min())
}

/// Plug-in weight from a fitted estimate, clamped to 1/pi_min_hat.
pub fn estimated_weight(
    est: &GmmEstimate,
    x: &ArrayView1<f64>,
    c: usize,
) -> Result<(f64, bool)> {
    let (b, j) = est.locate(c)?;
    weight_from_mixture(&est.mixtures[b], j, x, 1.0 / est.pi_min_hat)
}

/// Dense n x C weight table, zero outside each example's superclass block.
#[derive(Debug, Clone)]
pub struct WeightMatrix {
    values: Array2<f64>,
    /// Superclass of each column (subclass/component id).
    pub subclass_supers: Vec<usize>,
    /// Estimated or true p(z = c | y = S(c)) per column, for identity checks.
    pub conditional_probs: Vec<f64>,
    /// Upper bound the entries were clamped to.
    pub clamp: f64,
}

impl WeightMatrix {
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_subclasses(&self) -> usize {
        self.values.ncols()
    }

    pub fn value(&self, example: usize, subclass: usize) -> f64 {
        self.values[(example, subclass)]
    }

    /// Direct construction (tests and the indicator-weight reduction).
    pub fn from_parts(
        values: Array2<f64>,
        subclass_supers: Vec<usize>,
        conditional_probs: Vec<f64>,
        clamp: f64,
    ) -> Result<Self> {
        if values.ncols() != subclass_supers.len() || values.ncols() != conditional_probs.len() {
            return Err(Error::dims("weight matrix metadata length mismatch"));
        }
        Ok(WeightMatrix {
            values,
            subclass_supers,
            conditional_probs,
            clamp,
        })
    }

    /// Check the entry bound and the mixture identity
    /// sum_c p(z=c | y=b) w(x, c) = 1 on every row.
    pub fn validate(&self, y: &[usize], tol: f64) -> Result<()> {
        for i in 0..self.n() {
            let mut total = 0.0;
            for c in 0..self.n_subclasses() {
                let v = self.values[(i, c)];
                if !(0.0..=self.clamp * (1.0 + 1e-9)).contains(&v) {
                    return Err(Error::invalid(format!(
                        "weight {v} at ({i}, {c}) violates [0, {}]",
                        self.clamp
                    )));
                }
                if self.subclass_supers[c] == y[i] {
                    total += self.conditional_probs[c] * v;
                }
            }
            if (total - 1.0).abs() > tol {
                return Err(Error::invalid(format!(
                    "mixture identity violated at row {i}: {total}"
                )));
            }
        }
        Ok(())
    }
}

/// Evaluate true-density weights for every (example, subclass) pair.
pub fn weight_matrix_from_spec(spec: &GenerativeSpec, points: &Array2<f64>, y: &[usize]) -> Result<WeightMatrix> {
    let n = points.nrows();
    let c_total = spec.n_subclasses();
    let clamp = 1.0 / spec.pi_min();
    let mut values = Array2::zeros((n, c_total));
    let marginals = spec.superclass_marginals();
    let conditional: Vec<f64> = (0..c_total)
        .map(|c| spec.subclass_probs()[c] / marginals[spec.subclass_supers()[c]])
        .collect();
    for i in 0..n {
        let x = points.row(i);
        for c in 0..c_total {
            if spec.subclass_supers()[c] == y[i] {
                values[(i, c)] = true_weight(spec, &x, c)?.0;
            }
        }
    }
    WeightMatrix::from_parts(values, spec.subclass_supers().to_vec(), conditional, clamp)
}

/// Evaluate plug-in weights for every (example, component) pair.
pub fn weight_matrix_from_estimate(
    est: &GmmEstimate,
    points: &Array2<f64>,
    y: &[usize],
) -> Result<WeightMatrix> {
    let n = points.nrows();
    let c_total = est.n_components();
    let clamp = 1.0 / est.pi_min_hat;
    let mut values = Array2::zeros((n, c_total));
    let conditional: Vec<f64> = (0..c_total)
        .map(|c| est.component_weight_in_superclass(c))
        .collect::<Result<_>>()?;
    for i in 0..n {
        let x = points.row(i);
        for c in 0..c_total {
            if est.component_supers[c] == y[i] {
                values[(i, c)] = estimated_weight(est, &x, c)?.0;
            }
        }
    }
    WeightMatrix::from_parts(values, est.component_supers.clone(), conditional, clamp)
}

/// Per-subclass mean losses of a model under the true subclass labels.
#[derive(Debug, Clone)]
pub struct SubclassRisk {
    /// None marks a subclass with no examples (excluded, flagged).
    pub per_subclass: Vec<Option<f64>>,
    pub counts: Vec<usize>,
}

impl SubclassRisk {
    /// Worst (largest) per-subclass risk over the nonempty subclasses.
    pub fn robust(&self) -> f64 {
        self.per_subclass
            .iter()
            .flatten()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn excluded(&self) -> Vec<usize> {
        self.per_subclass
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_none())
            .map(|(c, _)| c)
            .collect()
    }
}

/// R_c: mean loss over the examples of each true subclass (oracle read).
pub fn per_subclass_risk(model: &Classifier, dataset: &Dataset) -> Result<SubclassRisk> {
    let z = dataset
        .subclasses(ZUse::OracleMetric)
        .ok_or_else(|| Error::invalid("per-subclass risk requires true subclass labels"))?;
    let c_total = dataset.n_subclasses().unwrap_or(0);
    let losses = model.example_losses(dataset.features(), dataset.labels())?;
    let mut sums = vec![0.0; c_total];
    let mut counts = vec![0usize; c_total];
    for (i, &zi) in z.iter().enumerate() {
        sums[zi] += losses[i];
        counts[zi] += 1;
    }
    let per_subclass = (0..c_total)
        .map(|c| {
            if counts[c] > 0 {
                Some(sums[c] / counts[c] as f64)
            } else {
                None
            }
        })
        .collect();
    Ok(SubclassRisk {
        per_subclass,
        counts,
    })
}

/// Reweighted risks: for each subclass c, the mean of `w(x_i, c) loss_i` over
/// the examples of superclass S(c).
pub fn reweighted_risk(
    model: &Classifier,
    dataset: &Dataset,
    weights: &WeightMatrix,
) -> Result<Vec<f64>> {
    if weights.n() != dataset.n() {
        return Err(Error::dims("weight matrix rows differ from dataset size"));
    }
    let losses = model.example_losses(dataset.features(), dataset.labels())?;
    let c_total = weights.n_subclasses();
    let mut sums = vec![0.0; c_total];
    let mut super_counts = vec![0usize; dataset.n_superclasses()];
    for &yi in dataset.labels() {
        super_counts[yi] += 1;
    }
    for (i, &yi) in dataset.labels().iter().enumerate() {
        for c in 0..c_total {
            if weights.subclass_supers[c] == yi {
                sums[c] += weights.value(i, c) * losses[i];
            }
        }
    }
    Ok((0..c_total)
        .map(|c| {
            let b = weights.subclass_supers[c];
            sums[c] / super_counts[b].max(1) as f64
        })
        .collect())
}

/// Fit one Gaussian mixture per superclass on the given representation.
/// `components[b]` fixes the component count of superclass b; `n_init` runs
/// EM from that many seeds and keeps the best final log-likelihood.
pub fn fit_superclass_mixtures(
    dataset: &Dataset,
    points: &Array2<f64>,
    components: &[usize],
    n_init: usize,
    seed: u64,
) -> Result<GmmEstimate> {
    let n_super = dataset.n_superclasses();
    if components.len() != n_super {
        return Err(Error::invalid(format!(
            "need a component count per superclass ({n_super})"
        )));
    }
    if n_init == 0 {
        return Err(Error::invalid("n_init must be >= 1"));
    }
    let mut mixtures = Vec::with_capacity(n_super);
    let mut marginals = Vec::with_capacity(n_super);
    for b in 0..n_super {
        let members = dataset.members_of_superclass(b);
        if members.len() < components[b] {
            return Err(Error::invalid(format!(
                "superclass {b} has {} points, fewer than {} components",
                members.len(),
                components[b]
            )));
        }
        let rows = crate::cluster::select_rows(&points.view(), &members);
        let mut best: Option<crate::cluster::GmmFit> = None;
        for init in 0..n_init {
            let fit = gmm_em(&rows.view(), components[b], derive_seed(seed, (b * 64 + init) as u64));
            if let Ok(fit) = fit {
                let better = match &best {
                    None => true,
                    Some(cur) => {
                        fit.log_likelihood.last() > cur.log_likelihood.last()
                    }
                };
                if better {
                    best = Some(fit);
                }
            }
        }
        let fit = best.ok_or_else(|| {
            Error::numerical(format!("EM failed for superclass {b} on every init"))
        })?;
        mixtures.push(fit.mixture);
        marginals.push(members.len() as f64 / dataset.n() as f64);
    }
    let mut offsets = Vec::with_capacity(n_super);
    let mut component_supers = Vec::new();
    let mut total = 0usize;
    let mut pi_min_hat = f64::INFINITY;
    for (b, m) in mixtures.iter().enumerate() {
        offsets.push(total);
        total += m.k();
        for &w in m.weights() {
            component_supers.push(b);
            pi_min_hat = pi_min_hat.min(w * marginals[b]);
        }
    }
    if !(pi_min_hat > 0.0) {
        return Err(Error::numerical("estimated minimum subclass proportion is zero"));
    }
    Ok(GmmEstimate {
        mixtures,
        superclass_marginals: marginals,
        offsets,
        component_supers,
        pi_min_hat,
    })
}

/// Monte-Carlo total variation estimate with its standard error.
#[derive(Debug, Clone, Copy)]
pub struct TvEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

/// Estimate TV(p, q) = 1/2 E_{x ~ m} [ |p - q| / m ] with m = (p + q)/2,
/// sampled by an even mixture of the two distributions. The integrand
/// simplifies to tanh(|ln p - ln q| / 2), so everything stays in log space.
pub fn mc_total_variation(
    p: &dyn SampleDensity,
    q: &dyn SampleDensity,
    n_samples: usize,
    seed: u64,
) -> Result<TvEstimate> {
    if n_samples == 0 {
        return Err(Error::invalid("need at least one sample"));
    }
    if p.dim() != q.dim() {
        return Err(Error::dims("distributions live in different dimensions"));
    }
    let mut rng = seeded_rng(seed);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_samples {
        let x = if rng.random::<f64>() < 0.5 {
            p.sample(&mut rng)
        } else {
            q.sample(&mut rng)
        };
        let lp = p.log_density(&x.view())?;
        let lq = q.log_density(&x.view())?;
        let v = if lp.is_finite() || lq.is_finite() {
            ((lp - lq).abs() / 2.0).tanh()
        } else {
            0.0
        };
        let v = if v.is_nan() { 1.0 } else { v };
        sum += v;
        sum_sq += v * v;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    Ok(TvEstimate {
        estimate: mean,
        std_error: (var / n).sqrt(),
        n_samples,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Lemma1Row {
    pub trial: usize,
    pub n: usize,
    pub max_gap: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Lemma1Result {
    pub slope: f64,
    pub intercept: f64,
    /// Bootstrap (over trials) half-width of a 95% interval on the slope.
    pub slope_ci_halfwidth: f64,
    pub per_n_mean_gap: Vec<(usize, f64)>,
    pub rows: Vec<Lemma1Row>,
}

/// Empirical convergence-rate experiment for the reweighted risk estimator:
/// per trial, draw a fresh randomized mixture family and a fixed random
/// linear model, then compare the worst-subclass gap |reweighted - direct|
/// across sample sizes. Returns the fitted log-log slope.
pub fn lemma1_experiment(
    d: usize,
    n_grid: &[usize],
    trials: usize,
    seed: u64,
) -> Result<Lemma1Result> {
    if n_grid.len() < 2 {
        return Err(Error::invalid(
            "slope undefined: need at least two sample sizes",
        ));
    }
    if n_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("sample-size grid must be increasing"));
    }
    if trials == 0 {
        return Err(Error::invalid("trials must be >= 1"));
    }
    let rows: Vec<Lemma1Row> = (0..trials)
        .into_par_iter()
        .map(|trial| -> Result<Vec<Lemma1Row>> {
            let trial_seed = derive_seed(seed, trial as u64);
            let spec = lemma1_spec(d, derive_seed(trial_seed, 0))?;
            let model = Classifier::new(
                &ModelConfig::linear(),
                d,
                spec.n_superclasses(),
                derive_seed(trial_seed, 1),
            );
            let mut out = Vec::with_capacity(n_grid.len());
            for (gi, &n) in n_grid.iter().enumerate() {
                let data = sample_dataset(&spec, n, derive_seed(trial_seed, 2 + gi as u64))?;
                let direct = per_subclass_risk(&model, &data)?;
                let weights =
                    weight_matrix_from_spec(&spec, data.features(), data.labels())?;
                let reweighted = reweighted_risk(&model, &data, &weights)?;
                let mut max_gap = 0.0f64;
                for (c, r) in direct.per_subclass.iter().enumerate() {
                    if let Some(rc) = r {
                        max_gap = max_gap.max((reweighted[c] - rc).abs());
                    }
                }
                out.push(Lemma1Row {
                    trial,
                    n,
                    max_gap,
                });
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let (slope, intercept, per_n_mean_gap) = fit_rate(&rows, n_grid, None)?;

    // bootstrap over trials
    let mut boot_rng = seeded_rng(derive_seed(seed, 0xb001));
    let mut slopes = Vec::with_capacity(200);
    for _ in 0..200 {
        let resample: Vec<usize> = (0..trials)
            .map(|_| boot_rng.random_range(0..trials))
            .collect();
        if let Ok((s, _, _)) = fit_rate(&rows, n_grid, Some(&resample)) {
            slopes.push(s);
        }
    }
    let (_, half) = crate::linalg::mean_ci(&slopes);

    Ok(Lemma1Result {
        slope,
        intercept,
        slope_ci_halfwidth: half,
        per_n_mean_gap,
        rows,
    })
}

fn fit_rate(
    rows: &[Lemma1Row],
    n_grid: &[usize],
    trial_resample: Option<&[usize]>,
) -> Result<(f64, f64, Vec<(usize, f64)>)> {
    let mut per_n = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let mut total = 0.0;
        let mut count = 0usize;
        match trial_resample {
            None => {
                for r in rows.iter().filter(|r| r.n == n) {
                    total += r.max_gap;
                    count += 1;
                }
            }
            Some(resample) => {
                for &t in resample {
                    for r in rows.iter().filter(|r| r.n == n && r.trial == t) {
                        total += r.max_gap;
                        count += 1;
                    }
                }
            }
        }
        per_n.push((n, total / count.max(1) as f64));
    }
    let xs: Vec<f64> = per_n.iter().map(|(n, _)| (*n as f64).ln()).collect();
    let ys: Vec<f64> = per_n.iter().map(|(_, g)| g.max(1e-300).ln()).collect();
    let (slope, intercept) = least_squares_line(&xs, &ys)?;
    Ok((slope, intercept, per_n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::MultivariateNormal;
    use crate::synthgen::example1_spec;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn one_subclass_per_superclass_gives_unit_weights() {
        // build a spec with a single subclass in each superclass
        let means = vec![array![-3.0], array![3.0]];
        let covs = vec![array![[1.0]], array![[1.0]]];
        let spec = crate::synthgen::GenerativeSpec::new(
            1,
            1,
            vec![0.5, 0.5],
            means,
            covs,
            vec![0, 1],
            crate::synthgen::FeatureMap::Identity,
        )
        .unwrap();
        for x in [-5.0, 0.0, 2.0] {
            let (w, flag) = true_weight(&spec, &array![x].view(), 0).unwrap();
            assert_abs_diff_eq!(w, 1.0, epsilon = 1e-12);
            assert!(!flag);
        }
    }

    #[test]
    fn symmetric_midpoint_weight_is_one() {
        // balanced two-subclass superclass, x at the midpoint
        let spec = balanced_pair_spec();
        let mid = array![0.0];
        for c in 0..2 {
            let (w, _) = true_weight(&spec, &mid.view(), c).unwrap();
            assert_abs_diff_eq!(w, 1.0, epsilon = 1e-12);
        }
    }

    fn balanced_pair_spec() -> GenerativeSpec {
        // superclass 0 holds subclasses at -2 and +2; superclass 1 far away
        crate::synthgen::GenerativeSpec::new(
            2,
            1,
            vec![0.25, 0.25, 0.5, 0.0],
            vec![array![-2.0], array![2.0], array![50.0], array![0.0]],
            vec![
                array![[1.0]],
                array![[1.0]],
                array![[1.0]],
                array![[1.0]],
            ],
            vec![0, 0, 1, 1],
            crate::synthgen::FeatureMap::Identity,
        )
        .unwrap()
    }

    #[test]
    fn rare_subclass_weight_matches_direct_density_evaluation() {
        let alpha = 0.05;
        let spec = example1_spec(alpha).unwrap();
        let rare = spec.subclass_of_attributes(&[1, -1]).unwrap();
        let x = array![4.0, -2.0];
        let (w, flag) = true_weight(&spec, &x.view(), rare).unwrap();
        assert!(!flag);
        // oracle: explicit two-component density ratio at the rare mean;
        // the big component is ~160 sigma away so its density vanishes and
        // w -> 1/alpha, but compute both terms explicitly anyway
        let var = alpha * alpha;
        let other = spec.subclass_of_attributes(&[-1, -1]).unwrap();
        let comp_rare = MultivariateNormal::new(array![4.0, -2.0], ndarray::Array2::eye(2) * var).unwrap();
        let comp_big = MultivariateNormal::new(array![-4.0, -4.0], ndarray::Array2::eye(2) * var).unwrap();
        let p_rare = comp_rare.log_density(&x.view()).unwrap().exp();
        let p_big = comp_big.log_density(&x.view()).unwrap().exp();
        let expect = p_rare / (alpha * p_rare + (1.0 - alpha) * p_big);
        // the clamp at 1/pi_min binds only when expect exceeds it
        let clamp = 1.0 / spec.pi_min();
        let expect = expect.min(clamp);
        assert_abs_diff_eq!(w, expect, epsilon = 1e-9 * expect);
        let _ = other;
    }

    #[test]
    fn weights_respect_the_clamp_everywhere() {
        let spec = example1_spec(0.02).unwrap();
        let data = sample_dataset(&spec, 500, 3).unwrap();
        let clamp = 1.0 / spec.pi_min();
        let w = weight_matrix_from_spec(&spec, data.features(), data.labels()).unwrap();
        for i in 0..data.n() {
            for c in 0..4 {
                assert!(w.value(i, c) <= clamp * (1.0 + 1e-12));
                assert!(w.value(i, c) >= 0.0);
            }
        }
        w.validate(data.labels(), 1e-6).unwrap();
    }

    #[test]
    fn underflowed_denominator_returns_the_clamp_with_a_flag() {
        let spec = example1_spec(0.02).unwrap();
        // so far out that even the log densities overflow to -inf
        let x = array![1e200, 1e200];
        let (w, flag) = true_weight(&spec, &x.view(), 0).unwrap();
        assert!(flag);
        assert_abs_diff_eq!(w, 1.0 / spec.pi_min(), epsilon = 1e-6);
    }

    #[test]
    fn log_space_evaluation_survives_forty_sigma() {
        // a point 40 sigma from one component but close to another must get
        // a finite, nonzero denominator
        let spec = balanced_pair_spec();
        let x = array![-2.0 - 40.0]; // 40 sigma left of the left component
        let (w, flag) = true_weight(&spec, &x.view(), 0).unwrap();
        assert!(!flag);
        assert!(w.is_finite() && w > 0.0);
    }

    #[test]
    fn estimated_weight_from_single_component_is_one() {
        let spec = example1_spec(0.3).unwrap();
        let data = sample_dataset(&spec, 400, 0).unwrap();
        let est =
            fit_superclass_mixtures(&data, data.features(), &[1, 1], 1, 0).unwrap();
        let (w, _) = estimated_weight(&est, &data.features().row(0), data.labels()[0]).unwrap();
        assert_abs_diff_eq!(w, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn estimated_weight_peaks_near_inverse_component_weight() {
        let spec = example1_spec(0.05).unwrap();
        let data = sample_dataset(&spec, 4000, 1).unwrap();
        let est = fit_superclass_mixtures(&data, data.features(), &[2, 2], 1, 0).unwrap();
        // at a component mean, the weight should reach >= 0.9 / mixture weight
        for b in 0..2 {
            for (j, comp) in est.mixtures[b].components().iter().enumerate() {
                let global = est.offsets[b] + j;
                let (w, _) =
                    estimated_weight(&est, &comp.mean().view(), global).unwrap();
                let target = 1.0 / est.mixtures[b].weights()[j];
                let clamp = 1.0 / est.pi_min_hat;
                assert!(
                    w >= 0.9 * target.min(clamp),
                    "component ({b}, {j}): weight {w} vs target {target}"
                );
            }
        }
    }

    #[test]
    fn subclass_risk_matches_direct_enumeration() {
        let spec = example1_spec(0.2).unwrap();
        let data = sample_dataset(&spec, 200, 5).unwrap();
        let model = Classifier::binary_linear(&[0.3, 0.8], -0.1);
        let risk = per_subclass_risk(&model, &data).unwrap();
        let losses = model
            .example_losses(data.features(), data.labels())
            .unwrap();
        let z = data.subclasses(ZUse::OracleMetric).unwrap();
        for c in 0..4 {
            let members: Vec<usize> = (0..data.n()).filter(|&i| z[i] == c).collect();
            if members.is_empty() {
                assert!(risk.per_subclass[c].is_none());
                continue;
            }
            let direct: f64 =
                members.iter().map(|&i| losses[i]).sum::<f64>() / members.len() as f64;
            assert_abs_diff_eq!(risk.per_subclass[c].unwrap(), direct, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(
            risk.robust(),
            risk.per_subclass.iter().flatten().cloned().fold(f64::MIN, f64::max),
            epsilon = 0.0
        );
    }

    #[test]
    fn uniform_losses_give_uniform_risks() {
        let spec = example1_spec(0.2).unwrap();
        let data = sample_dataset(&spec, 300, 6).unwrap();
        let mut model = Classifier::new(&ModelConfig::linear(), 2, 2, 0);
        model.params_mut().iter_mut().for_each(|p| *p = 0.0);
        let risk = per_subclass_risk(&model, &data).unwrap();
        for r in risk.per_subclass.iter().flatten() {
            assert_abs_diff_eq!(*r, (2.0f64).ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn indicator_weights_reproduce_direct_risks_exactly() {
        let spec = example1_spec(0.2).unwrap();
        let data = sample_dataset(&spec, 400, 7).unwrap();
        let model = Classifier::binary_linear(&[1.0, -0.5], 0.2);
        let z = data.subclasses(ZUse::OracleMetric).unwrap().to_vec();
        let mut super_counts = vec![0usize; 2];
        for &yi in data.labels() {
            super_counts[yi] += 1;
        }
        let mut counts = vec![0usize; 4];
        for &zi in &z {
            counts[zi] += 1;
        }
        let mut values = Array2::zeros((data.n(), 4));
        for (i, &zi) in z.iter().enumerate() {
            let b = data.labels()[i];
            values[(i, zi)] = super_counts[b] as f64 / counts[zi] as f64;
        }
        let conditional: Vec<f64> = (0..4)
            .map(|c| counts[c] as f64 / super_counts[spec.subclass_supers()[c]] as f64)
            .collect();
        let w = WeightMatrix::from_parts(
            values,
            spec.subclass_supers().to_vec(),
            conditional,
            f64::INFINITY,
        )
        .unwrap();
        let reweighted = reweighted_risk(&model, &data, &w).unwrap();
        let direct = per_subclass_risk(&model, &data).unwrap();
        for c in 0..4 {
            assert_abs_diff_eq!(
                reweighted[c],
                direct.per_subclass[c].unwrap(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn reweighted_risk_tracks_direct_risk_at_monte_carlo_rate() {
        // with true-density weights the worst-subclass gap shrinks like
        // 1/sqrt(n); the constant 45 is the 99th percentile of
        // max_gap * sqrt(n) measured over 200 independent trials
        let mut ok = 0;
        let trials = 40;
        for t in 0..trials {
            let spec = lemma1_spec(3, t as u64).unwrap();
            let n = 1000;
            let data = sample_dataset(&spec, n, 1000 + t as u64).unwrap();
            let model = Classifier::new(&ModelConfig::linear(), 3, 2, t as u64);
            let direct = per_subclass_risk(&model, &data).unwrap();
            let w = weight_matrix_from_spec(&spec, data.features(), data.labels()).unwrap();
            let rew = reweighted_risk(&model, &data, &w).unwrap();
            let mut max_gap = 0.0f64;
            for (c, r) in direct.per_subclass.iter().enumerate() {
                if let Some(rc) = r {
                    max_gap = max_gap.max((rew[c] - rc).abs());
                }
            }
            if max_gap < 45.0 / (n as f64).sqrt() {
                ok += 1;
            }
        }
        assert!(ok * 100 >= trials * 95, "only {ok}/{trials} under the bound");
    }

    #[test]
    fn unbiasedness_over_resamples() {
        // paired check: mean difference within 2.576 sd/sqrt(T) of zero
        let spec = example1_spec(0.25).unwrap();
        let model = Classifier::binary_linear(&[0.4, 0.4], 0.0);
        let t_resamples = 10_000;
        let n = 250;
        let diffs: Vec<Vec<f64>> = (0..t_resamples)
            .into_par_iter()
            .map(|t| {
                let data = sample_dataset(&spec, n, 77_000 + t as u64).unwrap();
                let direct = per_subclass_risk(&model, &data).unwrap();
                let w = weight_matrix_from_spec(&spec, data.features(), data.labels()).unwrap();
                let rew = reweighted_risk(&model, &data, &w).unwrap();
                (0..4)
                    .map(|c| match direct.per_subclass[c] {
                        Some(rc) => rew[c] - rc,
                        None => f64::NAN,
                    })
                    .collect()
            })
            .collect();
        for c in 0..4 {
            let vals: Vec<f64> = diffs.iter().map(|d| d[c]).filter(|v| v.is_finite()).collect();
            let (mean, _) = crate::linalg::mean_ci(&vals);
            let sd = {
                let m = mean;
                (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (vals.len() as f64 - 1.0))
                    .sqrt()
            };
            let bound = 2.576 * sd / (vals.len() as f64).sqrt();
            assert!(
                mean.abs() <= bound,
                "subclass {c}: mean diff {mean} outside +/- {bound}"
            );
        }
    }

    #[test]
    fn tv_of_identical_distributions_is_near_zero() {
        let p = MultivariateNormal::new(array![0.0], array![[1.0]]).unwrap();
        let est = mc_total_variation(&p, &p.clone(), 20_000, 0).unwrap();
        assert!(est.estimate <= 2.0 * est.std_error.max(1e-12) + 1e-9);
    }

    #[test]
    fn tv_of_disjoint_gaussians_is_near_one() {
        let p = MultivariateNormal::new(array![0.0], array![[1.0]]).unwrap();
        let q = MultivariateNormal::new(array![200.0], array![[1.0]]).unwrap();
        let est = mc_total_variation(&p, &q, 5_000, 1).unwrap();
        assert!(est.estimate >= 0.99, "estimate {}", est.estimate);
    }

    #[test]
    fn tv_matches_the_gaussian_closed_form() {
        // TV(N(0,1), N(1,1)) = 2 Phi(1/2) - 1
        let p = MultivariateNormal::new(array![0.0], array![[1.0]]).unwrap();
        let q = MultivariateNormal::new(array![1.0], array![[1.0]]).unwrap();
        let est = mc_total_variation(&p, &q, 200_000, 2).unwrap();
        let phi_half = 0.5 * (1.0 + statrs::function::erf::erf(0.5 / 2.0f64.sqrt()));
        let closed = 2.0 * phi_half - 1.0;
        assert!(
            (est.estimate - closed).abs() <= 3.0 * est.std_error,
            "estimate {} vs closed form {closed} (se {})",
            est.estimate,
            est.std_error
        );
    }

    #[test]
    fn fitted_mixture_recovers_rare_component_weight() {
        let alpha = 0.05;
        let spec = example1_spec(alpha).unwrap();
        let data = sample_dataset(&spec, 10_000, 9).unwrap();
        let est = fit_superclass_mixtures(&data, data.features(), &[2, 2], 1, 4).unwrap();
        for b in 0..2 {
            let min_w = est.mixtures[b]
                .weights()
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            assert!(
                (min_w - alpha).abs() <= 0.01,
                "superclass {b}: rare weight {min_w}"
            );
        }
    }

    #[test]
    fn fitted_mixture_is_close_in_total_variation() {
        let spec = lemma1_spec(3, 1).unwrap();
        let data = sample_dataset(&spec, 10_000, 2).unwrap();
        let est = fit_superclass_mixtures(&data, data.features(), &[6, 6], 5, 0).unwrap();
        for b in 0..2 {
            let truth = spec.superclass_mixture(b).unwrap();
            let tv = mc_total_variation(&truth, &est.mixtures[b], 20_000, b as u64).unwrap();
            assert!(
                tv.estimate <= 0.05,
                "superclass {b}: TV {} (se {})",
                tv.estimate,
                tv.std_error
            );
        }
    }

    #[test]
    fn rate_experiment_slope_is_near_minus_half() {
        let grid = [250, 500, 1000, 2000, 4000, 8000];
        let result = lemma1_experiment(3, &grid, 20, 0).unwrap();
        assert!(
            result.slope >= -0.65 && result.slope <= -0.35,
            "slope {}",
            result.slope
        );
    }

    #[test]
    fn single_grid_point_is_an_error() {
        assert!(lemma1_experiment(3, &[1000], 5, 0).is_err());
    }

    #[test]
    fn more_trials_shrink_the_bootstrap_interval() {
        let grid = [250, 500, 1000, 2000];
        let few = lemma1_experiment(3, &grid, 5, 3).unwrap();
        let many = lemma1_experiment(3, &grid, 40, 3).unwrap();
        assert!(
            many.slope_ci_halfwidth < few.slope_ci_halfwidth,
            "few {} vs many {}",
            few.slope_ci_halfwidth,
            many.slope_ci_halfwidth
        );
    }
}
