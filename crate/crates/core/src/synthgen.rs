//! Hierarchical generative model and the synthetic families used for
//! validation.
//!
//! A draw proceeds attribute vector -> latent features -> observation: a
//! binary attribute vector `Z` in {-1,+1}^k is sampled from a probability
//! table, latent features `V ~ N(mu_Z, Sigma_Z)` follow, the observation is
//! `X = g(V)` for a fixed feature map, and the superclass label is a fixed
//! function of `Z` alone. Attribute values that influence `V` but not the
//! label are exactly the hidden subclasses.

use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{GaussianMixture, MultivariateNormal};
use crate::rng::{row_rng, seeded_rng};

/// Fixed map from latent features to observations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum FeatureMap {
    /// X = V (the default; the synthetic families observe the latents).
    Identity,
    /// X = M v for a fixed matrix M.
    Linear { matrix: Array2<f64> },
}

impl FeatureMap {
    fn apply(&self, v: &[f64], out: &mut Vec<f64>) {
        match self {
            FeatureMap::Identity => {
                out.clear();
                out.extend_from_slice(v);
            }
            FeatureMap::Linear { matrix } => {
                out.clear();
                out.resize(matrix.nrows(), 0.0);
                for r in 0..matrix.nrows() {
                    let mut acc = 0.0;
                    for (c, &vc) in v.iter().enumerate() {
                        acc += matrix[(r, c)] * vc;
                    }
                    out[r] = acc;
                }
            }
        }
    }

    fn out_dim(&self, d: usize) -> usize {
        match self {
            FeatureMap::Identity => d,
            FeatureMap::Linear { matrix } => matrix.nrows(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RawSpec {
    k: usize,
    d: usize,
    attribute_probs: Vec<f64>,
    means: Vec<Array1<f64>>,
    covs: Vec<Array2<f64>>,
    labeler: Vec<usize>,
    feature_map: FeatureMap,
}

/// Parameters of the generative process, validated at construction.
///
/// The per-attribute tables are indexed by the integer encoding of `Z`: bit
/// `j` of the index is set iff `Z_j = +1`. Attribute values with zero
/// probability are excluded from the subclass index set, so subclass ids are
/// contiguous over the attainable values.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct GenerativeSpec {
    k: usize,
    d: usize,
    attribute_probs: Vec<f64>,
    means: Vec<Array1<f64>>,
    covs: Vec<Array2<f64>>,
    labeler: Vec<usize>,
    feature_map: FeatureMap,
    // derived
    subclass_attrs: Vec<usize>,
    subclass_probs: Vec<f64>,
    subclass_supers: Vec<usize>,
    components: Vec<MultivariateNormal>,
    cum_probs: Vec<f64>,
    n_superclasses: usize,
}

impl From<GenerativeSpec> for RawSpec {
    fn from(s: GenerativeSpec) -> Self {
        RawSpec {
            k: s.k,
            d: s.d,
            attribute_probs: s.attribute_probs,
            means: s.means,
            covs: s.covs,
            labeler: s.labeler,
            feature_map: s.feature_map,
        }
    }
}

impl TryFrom<RawSpec> for GenerativeSpec {
    type Error = Error;
    fn try_from(raw: RawSpec) -> Result<Self> {
        GenerativeSpec::new(
            raw.k,
            raw.d,
            raw.attribute_probs,
            raw.means,
            raw.covs,
            raw.labeler,
            raw.feature_map,
        )
    }
}

impl GenerativeSpec {
    pub fn new(
        k: usize,
        d: usize,
        attribute_probs: Vec<f64>,
        means: Vec<Array1<f64>>,
        covs: Vec<Array2<f64>>,
        labeler: Vec<usize>,
        feature_map: FeatureMap,
    ) -> Result<Self> {
        let m = 1usize
            .checked_shl(k as u32)
            .ok_or_else(|| Error::invalid("attribute count k too large"))?;
        if k == 0 {
            return Err(Error::invalid("attribute count k must be positive"));
        }
        if attribute_probs.len() != m || means.len() != m || covs.len() != m || labeler.len() != m
        {
            return Err(Error::invalid(format!(
                "attribute tables must all have 2^k = {m} entries"
            )));
        }
        if attribute_probs
            .iter()
            .any(|&p| !(p.is_finite() && p >= 0.0))
        {
            return Err(Error::invalid("attribute probabilities must be >= 0"));
        }
        let total: f64 = attribute_probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "attribute probabilities sum to {total:.15}, expected 1 within 1e-12"
            )));
        }
        if means.iter().any(|mu| mu.len() != d) {
            return Err(Error::dims("every subclass mean must have dimension d"));
        }

        let mut subclass_attrs = Vec::new();
        let mut subclass_probs = Vec::new();
        let mut subclass_supers = Vec::new();
        let mut components = Vec::new();
        for attr in 0..m {
            if attribute_probs[attr] > 0.0 {
                // PSD/symmetry validation happens inside MultivariateNormal.
                let comp = MultivariateNormal::new(means[attr].clone(), covs[attr].clone())?;
                subclass_attrs.push(attr);
                subclass_probs.push(attribute_probs[attr]);
                subclass_supers.push(labeler[attr]);
                components.push(comp);
            }
        }
        if subclass_attrs.is_empty() {
            return Err(Error::invalid("no attribute value has positive probability"));
        }
        let n_superclasses = subclass_supers.iter().max().unwrap() + 1;
        if n_superclasses < 2 {
            return Err(Error::invalid("labeler must produce at least 2 superclasses"));
        }
        for b in 0..n_superclasses {
            if !subclass_supers.contains(&b) {
                return Err(Error::invalid(format!(
                    "superclass {b} has no attainable subclass"
                )));
            }
        }
        let mut cum_probs = Vec::with_capacity(subclass_probs.len());
        let mut acc = 0.0;
        for &p in &subclass_probs {
            acc += p;
            cum_probs.push(acc);
        }
        Ok(GenerativeSpec {
            k,
            d,
            attribute_probs,
            means,
            covs,
            labeler,
            feature_map,
            subclass_attrs,
            subclass_probs,
            subclass_supers,
            components,
            cum_probs,
            n_superclasses,
        })
    }

    pub fn attribute_count(&self) -> usize {
        self.k
    }

    pub fn latent_dim(&self) -> usize {
        self.d
    }

    pub fn observed_dim(&self) -> usize {
        self.feature_map.out_dim(self.d)
    }

    pub fn n_subclasses(&self) -> usize {
        self.subclass_attrs.len()
    }

    pub fn n_superclasses(&self) -> usize {
        self.n_superclasses
    }

    /// Marginal probability of each subclass.
    pub fn subclass_probs(&self) -> &[f64] {
        &self.subclass_probs
    }

    /// Superclass S(c) of each subclass.
    pub fn subclass_supers(&self) -> &[usize] {
        &self.subclass_supers
    }

    /// Minimum subclass proportion; the importance-weight clamp is its inverse.
    pub fn pi_min(&self) -> f64 {
        self.subclass_probs.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn component(&self, subclass: usize) -> &MultivariateNormal {
        &self.components[subclass]
    }

    /// Attribute vector of a subclass, entries in {-1, +1}.
    pub fn subclass_attributes(&self, subclass: usize) -> Vec<i8> {
        let idx = self.subclass_attrs[subclass];
        (0..self.k)
            .map(|j| if idx >> j & 1 == 1 { 1 } else { -1 })
            .collect()
    }

    /// Subclass id of an attribute vector, if it is attainable.
    pub fn subclass_of_attributes(&self, attrs: &[i8]) -> Option<usize> {
        if attrs.len() != self.k {
            return None;
        }
        let mut idx = 0usize;
        for (j, &a) in attrs.iter().enumerate() {
            if a == 1 {
                idx |= 1 << j;
            }
        }
        self.subclass_attrs.iter().position(|&a| a == idx)
    }

    /// Marginal probability of each superclass.
    pub fn superclass_marginals(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_superclasses];
        for (c, &b) in self.subclass_supers.iter().enumerate() {
            out[b] += self.subclass_probs[c];
        }
        out
    }

    /// The conditional distribution of V given y = b, as a Gaussian mixture
    /// with weights p(z = c | y = b).
    pub fn superclass_mixture(&self, superclass: usize) -> Result<GaussianMixture> {
        if superclass >= self.n_superclasses {
            return Err(Error::invalid(format!("unknown superclass {superclass}")));
        }
        let marginal: f64 = self
            .subclass_supers
            .iter()
            .zip(self.subclass_probs.iter())
            .filter(|(&b, _)| b == superclass)
            .map(|(_, &p)| p)
            .sum();
        let mut weights = Vec::new();
        let mut comps = Vec::new();
        for (c, &b) in self.subclass_supers.iter().enumerate() {
            if b == superclass {
                weights.push(self.subclass_probs[c] / marginal);
                comps.push(self.components[c].clone());
            }
        }
        GaussianMixture::new(weights, comps)
    }

    /// Subclass ids belonging to a superclass, in index order.
    pub fn subclasses_of(&self, superclass: usize) -> Vec<usize> {
        self.subclass_supers
            .iter()
            .enumerate()
            .filter(|(_, &b)| b == superclass)
            .map(|(c, _)| c)
            .collect()
    }

    /// A copy of this spec whose subclass probabilities are uniform within
    /// each superclass (superclass marginals preserved). Used for balanced
    /// evaluation sampling; the returned per-subclass importance weights
    /// (original divided by balanced probability) restore the original
    /// frequencies in weighted metrics.
    pub fn balanced_within_superclass(&self) -> Result<(GenerativeSpec, Vec<f64>)> {
        let marginals = self.superclass_marginals();
        let mut counts = vec![0usize; self.n_superclasses];
        for &b in &self.subclass_supers {
            counts[b] += 1;
        }
        let mut probs = self.attribute_probs.clone();
        let mut eval_weights = vec![0.0; self.n_subclasses()];
        for (c, &attr) in self.subclass_attrs.iter().enumerate() {
            let b = self.subclass_supers[c];
            let balanced = marginals[b] / counts[b] as f64;
            probs[attr] = balanced;
            eval_weights[c] = self.subclass_probs[c] / balanced;
        }
        let spec = GenerativeSpec::new(
            self.k,
            self.d,
            probs,
            self.means.clone(),
            self.covs.clone(),
            self.labeler.clone(),
            self.feature_map.clone(),
        )?;
        Ok((spec, eval_weights))
    }
}

/// Two-attribute family with a rare off-diagonal subclass inside each
/// superclass. The label is the second attribute; the first induces the
/// hidden split. As `alpha` shrinks the rare subclasses vanish in
/// probability while staying far from the decision boundary an
/// average-risk-optimal linear model picks.
pub fn example1_spec(alpha: f64) -> Result<GenerativeSpec> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(Error::invalid(format!(
            "alpha must lie in (0, 0.5), got {alpha}"
        )));
    }
    let var = alpha * alpha;
    let cov = Array2::eye(2) * var;
    // index bit 0 <-> Z1, bit 1 <-> Z2; V = (4 Z1, Z1 + 3 Z2)
    let mut probs = vec![0.0; 4];
    let mut means = Vec::with_capacity(4);
    let mut covs = Vec::with_capacity(4);
    let mut labeler = vec![0usize; 4];
    for idx in 0..4usize {
        let z1 = if idx & 1 == 1 { 1.0 } else { -1.0 };
        let z2 = if idx >> 1 & 1 == 1 { 1.0 } else { -1.0 };
        probs[idx] = if z1 == z2 { (1.0 - alpha) / 2.0 } else { alpha / 2.0 };
        means.push(ndarray::array![4.0 * z1, z1 + 3.0 * z2]);
        covs.push(cov.clone());
        labeler[idx] = if z2 > 0.0 { 1 } else { 0 };
    }
    GenerativeSpec::new(2, 2, probs, means, covs, labeler, FeatureMap::Identity)
}

/// Randomized mixture family for risk-estimator rate experiments: two
/// balanced superclasses of six subclasses each, subclass means uniform in
/// [-5, 5]^d and diagonal covariances with entries uniform in [0.25, 1].
pub fn lemma1_spec(d: usize, seed: u64) -> Result<GenerativeSpec> {
    if d == 0 {
        return Err(Error::invalid("dimension d must be positive"));
    }
    const K: usize = 4; // 16 attribute values; 12 carry probability
    let m = 1 << K;
    let mut rng = seeded_rng(seed);
    let mut probs = vec![0.0; m];
    let mut means = Vec::with_capacity(m);
    let mut covs = Vec::with_capacity(m);
    let mut labeler = vec![0usize; m];
    for idx in 0..m {
        let superclass = idx >> (K - 1); // top attribute carries the label
        labeler[idx] = superclass;
        let within = idx & (m / 2 - 1);
        if within < 6 {
            probs[idx] = 1.0 / 12.0;
            let mean = Array1::from_iter((0..d).map(|_| rng.random_range(-5.0..5.0)));
            let mut cov = Array2::zeros((d, d));
            for j in 0..d {
                cov[(j, j)] = rng.random_range(0.25..1.0);
            }
            means.push(mean);
            covs.push(cov);
        } else {
            means.push(Array1::zeros(d));
            covs.push(Array2::eye(d));
        }
    }
    // Exact unit total despite accumulated rounding.
    let total: f64 = probs.iter().sum();
    for p in probs.iter_mut() {
        *p /= total;
    }
    GenerativeSpec::new(K, d, probs, means, covs, labeler, FeatureMap::Identity)
}

/// Which purpose a subclass-label read serves; the dataset records both so a
/// pipeline can assert it never consumed oracle labels for training choices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZUse {
    /// Evaluation explicitly labeled as oracle (true-robust metrics, SCAA).
    OracleMetric,
    /// Labels fed back into training or selection (subclass-GDRO and such).
    GroupLabels,
}

#[derive(Debug, Default)]
struct ZAudit {
    oracle: AtomicUsize,
    group: AtomicUsize,
}

/// Feature matrix with superclass labels, optional true subclass labels and
/// optional evaluation weights.
///
/// Reads of the true subclass labels go through [`Dataset::subclasses`] and
/// are tallied by purpose; cloning resets the tally.
#[derive(Debug)]
pub struct Dataset {
    features: Array2<f64>,
    y: Vec<usize>,
    z: Option<Vec<usize>>,
    eval_weights: Option<Vec<f64>>,
    n_superclasses: usize,
    n_subclasses: usize,
    subclass_supers: Vec<usize>,
    z_audit: ZAudit,
}

impl Clone for Dataset {
    fn clone(&self) -> Self {
        Dataset {
            features: self.features.clone(),
            y: self.y.clone(),
            z: self.z.clone(),
            eval_weights: self.eval_weights.clone(),
            n_superclasses: self.n_superclasses,
            n_subclasses: self.n_subclasses,
            subclass_supers: self.subclass_supers.clone(),
            z_audit: ZAudit::default(),
        }
    }
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        y: Vec<usize>,
        z: Option<Vec<usize>>,
        eval_weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = features.nrows();
        if n == 0 {
            return Err(Error::invalid("dataset must contain at least one example"));
        }
        if y.len() != n {
            return Err(Error::dims("label vector length differs from feature rows"));
        }
        let n_superclasses = y.iter().max().copied().unwrap_or(0) + 1;
        if n_superclasses < 2 {
            return Err(Error::invalid(
                "dataset must contain at least 2 superclasses",
            ));
        }
        let (n_subclasses, subclass_supers) = match &z {
            Some(z) => {
                if z.len() != n {
                    return Err(Error::dims(
                        "subclass vector length differs from feature rows",
                    ));
                }
                let c = z.iter().max().copied().unwrap_or(0) + 1;
                let mut supers = vec![usize::MAX; c];
                for (&zi, &yi) in z.iter().zip(y.iter()) {
                    if supers[zi] == usize::MAX {
                        supers[zi] = yi;
                    } else if supers[zi] != yi {
                        return Err(Error::invalid(format!(
                            "subclass {zi} appears under superclasses {} and {yi}; \
                             a subclass must determine its superclass",
                            supers[zi]
                        )));
                    }
                }
                (c, supers)
            }
            None => (0, Vec::new()),
        };
        if let Some(w) = &eval_weights {
            if w.len() != n {
                return Err(Error::dims("weight vector length differs from feature rows"));
            }
            if w.iter().any(|&v| !(v.is_finite() && v >= 0.0)) {
                return Err(Error::invalid("evaluation weights must be >= 0"));
            }
            if w.iter().all(|&v| v == 0.0) {
                return Err(Error::invalid("evaluation weights must not all be zero"));
            }
        }
        Ok(Dataset {
            features,
            y,
            z,
            eval_weights,
            n_superclasses,
            n_subclasses,
            subclass_supers,
            z_audit: ZAudit::default(),
        })
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.y
    }

    pub fn n_superclasses(&self) -> usize {
        self.n_superclasses
    }

    pub fn has_subclasses(&self) -> bool {
        self.z.is_some()
    }

    pub fn n_subclasses(&self) -> Option<usize> {
        self.z.as_ref().map(|_| self.n_subclasses)
    }

    /// Superclass of each subclass id, when subclass labels are present.
    pub fn subclass_supers(&self) -> Option<&[usize]> {
        self.z.as_ref().map(|_| self.subclass_supers.as_slice())
    }

    /// True subclass labels, recorded against the stated purpose.
    pub fn subclasses(&self, usage: ZUse) -> Option<&[usize]> {
        if self.z.is_some() {
            match usage {
                ZUse::OracleMetric => self.z_audit.oracle.fetch_add(1, Ordering::Relaxed),
                ZUse::GroupLabels => self.z_audit.group.fetch_add(1, Ordering::Relaxed),
            };
        }
        self.z.as_deref()
    }

    pub fn oracle_reads(&self) -> usize {
        self.z_audit.oracle.load(Ordering::Relaxed)
    }

    pub fn group_label_reads(&self) -> usize {
        self.z_audit.group.load(Ordering::Relaxed)
    }

    pub fn eval_weights(&self) -> Option<&[f64]> {
        self.eval_weights.as_deref()
    }

    /// Per-example weights, all ones when none are set.
    pub fn weights_or_ones(&self) -> Vec<f64> {
        self.eval_weights
            .clone()
            .unwrap_or_else(|| vec![1.0; self.n()])
    }

    /// Example indices of one superclass.
    pub fn members_of_superclass(&self, b: usize) -> Vec<usize> {
        self.y
            .iter()
            .enumerate()
            .filter(|(_, &yi)| yi == b)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }
}

/// Draw `n` examples from the generative process. Bit-reproducible for a
/// fixed `(spec, n, seed)`; each row consumes its own RNG stream, so disjoint
/// row ranges sampled in parallel reproduce the serial output.
pub fn sample_dataset(spec: &GenerativeSpec, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::invalid("sample size must be >= 1"));
    }
    let d_out = spec.observed_dim();
    let mut features = Array2::<f64>::zeros((n, d_out));
    let mut y = vec![0usize; n];
    let mut z = vec![0usize; n];
    let mut x_buf = Vec::with_capacity(d_out);
    for i in 0..n {
        let mut rng = row_rng(seed, i as u64);
        let u: f64 = rng.random();
        let c = match spec
            .cum_probs
            .binary_search_by(|probe| probe.partial_cmp(&u).unwrap())
        {
            Ok(pos) => (pos + 1).min(spec.n_subclasses() - 1),
            Err(pos) => pos.min(spec.n_subclasses() - 1),
        };
        let v = spec.components[c].sample(&mut rng);
        spec.feature_map.apply(v.as_slice().unwrap(), &mut x_buf);
        features.row_mut(i).assign(&Array1::from_vec(x_buf.clone()));
        y[i] = spec.subclass_supers[c];
        z[i] = c;
    }
    Dataset::new(features, y, Some(z), None)
}
