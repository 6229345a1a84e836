use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::LabError;
use crate::data::{FieldSpec, Schema, Side};

/// Number of quantile-free buckets used for the segment/category fields.
pub const SEGMENT_BUCKETS: usize = 8;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x.clamp(-30.0, 30.0)).exp())
}

/// Ground-truth generator settings.
///
/// Each pair joins a user and an item drawn uniformly from their pools; the
/// pair's covariates are the user's features followed by the item's, all
/// standard normal. The click logit is
/// `propensity_intercept + (propensity_params + shift_strength * cvr_params) · x`,
/// so `shift_strength > 0` ties clicks to conversion-relevant covariates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub n_pairs: usize,
    pub n_users: usize,
    pub n_items: usize,
    pub feature_dim: usize,
    pub propensity_params: Vec<f64>,
    pub cvr_params: Vec<f64>,
    #[serde(default)]
    pub propensity_intercept: f64,
    #[serde(default)]
    pub cvr_intercept: f64,
    pub shift_strength: f64,
    pub min_propensity: f64,
    pub seed: u64,
}

impl WorldSpec {
    /// Random parameter vectors with the propensity direction orthogonal to
    /// the conversion direction, so `shift_strength = 0` yields independent
    /// click and conversion probabilities.
    pub fn random(n_pairs: usize, feature_dim: usize, shift_strength: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5e_ed0f_7a7a);
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..feature_dim).map(|_| rng.sample(StandardNormal)).collect() };
        let cvr = draw(&mut rng);
        let mut prop = draw(&mut rng);
        let cc: f64 = cvr.iter().map(|v| v * v).sum();
        if cc > 0.0 {
            let proj: f64 = prop.iter().zip(&cvr).map(|(a, b)| a * b).sum::<f64>() / cc;
            prop.iter_mut().zip(&cvr).for_each(|(p, c)| *p -= proj * c);
        }
        Self {
            n_pairs,
            n_users: n_pairs.max(1),
            n_items: n_pairs.max(1),
            feature_dim,
            propensity_params: prop,
            cvr_params: cvr,
            propensity_intercept: -1.0,
            cvr_intercept: -1.0,
            shift_strength,
            min_propensity: 0.01,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), LabError> {
        let bad = |m: &str| Err(LabError::InvalidSpec(m.to_string()));
        if self.n_pairs == 0 || self.n_users == 0 || self.n_items == 0 {
            return bad("n_pairs, n_users and n_items must be positive");
        }
        if self.feature_dim < 2 {
            return bad("feature_dim must be at least 2 (user and item halves)");
        }
        if self.propensity_params.len() != self.feature_dim || self.cvr_params.len() != self.feature_dim {
            return bad("parameter vectors must have length feature_dim");
        }
        if !(self.min_propensity > 0.0 && self.min_propensity < 1.0) {
            return bad("min_propensity must lie in (0, 1)");
        }
        if !(self.shift_strength >= 0.0 && self.shift_strength.is_finite()) {
            return bad("shift_strength must be finite and non-negative");
        }
        let finite = self
            .propensity_params
            .iter()
            .chain(&self.cvr_params)
            .chain([&self.propensity_intercept, &self.cvr_intercept])
            .all(|v| v.is_finite());
        if !finite {
            return bad("parameters must be finite");
        }
        Ok(())
    }

    pub fn user_dims(&self) -> usize {
        self.feature_dim.div_ceil(2)
    }
}

/// Materialised ground truth for one [`WorldSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticWorld {
    spec: WorldSpec,
    users: Vec<usize>,
    items: Vec<usize>,
    features: Vec<f64>,
    propensity: Vec<f64>,
    cvr_logit: Vec<f64>,
    conversion_prob: Vec<f64>,
}

fn bucket(x: f64) -> u32 {
    // uniform cells over [-2, 2]; tails fold into the end buckets
    let b = ((x + 2.0) / 4.0 * SEGMENT_BUCKETS as f64).floor();
    b.clamp(0.0, (SEGMENT_BUCKETS - 1) as f64) as u32
}

pub fn generate_world(spec: &WorldSpec) -> Result<SyntheticWorld, LabError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let du = spec.user_dims();
    let di = spec.feature_dim - du;
    let mut normals = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.sample(StandardNormal)).collect() };
    let user_feats = normals(spec.n_users * du);
    let item_feats = normals(spec.n_items * di);

    let mut users = Vec::with_capacity(spec.n_pairs);
    let mut items = Vec::with_capacity(spec.n_pairs);
    let mut features = Vec::with_capacity(spec.n_pairs * spec.feature_dim);
    for _ in 0..spec.n_pairs {
        let u = rng.random_range(0..spec.n_users);
        let i = rng.random_range(0..spec.n_items);
        users.push(u);
        items.push(i);
        features.extend_from_slice(&user_feats[u * du..(u + 1) * du]);
        features.extend_from_slice(&item_feats[i * di..(i + 1) * di]);
    }

    let click_dir: Vec<f64> = spec
        .propensity_params
        .iter()
        .zip(&spec.cvr_params)
        .map(|(p, c)| p + spec.shift_strength * c)
        .collect();
    let dot = |w: &[f64], x: &[f64]| w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    let mut propensity = Vec::with_capacity(spec.n_pairs);
    let mut cvr_logit = Vec::with_capacity(spec.n_pairs);
    for x in features.chunks(spec.feature_dim) {
        let p = sigmoid(spec.propensity_intercept + dot(&click_dir, x));
        propensity.push(p.clamp(spec.min_propensity, 1.0));
        cvr_logit.push(spec.cvr_intercept + dot(&spec.cvr_params, x));
    }
    let conversion_prob = cvr_logit.iter().map(|&z| sigmoid(z)).collect();
    Ok(SyntheticWorld {
        spec: spec.clone(),
        users,
        items,
        features,
        propensity,
        cvr_logit,
        conversion_prob,
    })
}

impl SyntheticWorld {
    pub fn spec(&self) -> &WorldSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.spec.n_pairs
    }

    pub fn is_empty(&self) -> bool {
        self.spec.n_pairs == 0
    }

    /// Covariates of pair `i`.
    pub fn features(&self, i: usize) -> &[f64] {
        let d = self.spec.feature_dim;
        &self.features[i * d..(i + 1) * d]
    }

    /// True click propensities `p`.
    pub fn propensity(&self) -> &[f64] {
        &self.propensity
    }

    /// True conversion probabilities `q`.
    pub fn conversion_prob(&self) -> &[f64] {
        &self.conversion_prob
    }

    pub fn cvr_logit(&self) -> &[f64] {
        &self.cvr_logit
    }

    pub fn user(&self, i: usize) -> usize {
        self.users[i]
    }

    pub fn item(&self, i: usize) -> usize {
        self.items[i]
    }

    /// Categorical schema of the records this world emits.
    pub fn schema(&self) -> Schema {
        Schema::new(vec![
            FieldSpec::new("user_id", self.spec.n_users, Side::User),
            FieldSpec::new("item_id", self.spec.n_items, Side::Item),
            FieldSpec::new("user_segment", SEGMENT_BUCKETS, Side::User),
            FieldSpec::new("item_category", SEGMENT_BUCKETS, Side::Item),
        ])
        .expect("static schema is valid")
    }

    /// Feature codes of pair `i` in [`schema`](Self::schema) order.
    pub fn codes(&self, i: usize) -> Vec<u32> {
        let du = self.spec.user_dims();
        let x = self.features(i);
        vec![self.users[i] as u32, self.items[i] as u32, bucket(x[0]), bucket(x[du])]
    }
}

/// One draw of clicks and conversions. Conversions are drawn everywhere
/// (oracle); [`masked`](Self::masked) hides them off the click set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Observations {
    pub clicks: Vec<bool>,
    pub conversions: Vec<bool>,
}

/// Realistic view: conversion labels exist only where the pair was clicked.
#[derive(Clone, Copy, Debug)]
pub struct MaskedView<'a> {
    obs: &'a Observations,
}

impl MaskedView<'_> {
    pub fn len(&self) -> usize {
        self.obs.clicks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.clicks.is_empty()
    }

    pub fn click(&self, i: usize) -> bool {
        self.obs.clicks[i]
    }

    pub fn conversion(&self, i: usize) -> Option<bool> {
        self.obs.clicks[i].then(|| self.obs.conversions[i])
    }

    pub fn labels(&self) -> Vec<Option<bool>> {
        (0..self.len()).map(|i| self.conversion(i)).collect()
    }
}

impl Observations {
    pub fn masked(&self) -> MaskedView<'_> {
        MaskedView { obs: self }
    }

    pub fn click_rate(&self) -> f64 {
        self.clicks.iter().filter(|&&c| c).count() as f64 / self.clicks.len().max(1) as f64
    }
}

/// `o ~ Bernoulli(p)` and `r ~ Bernoulli(q)` independently per pair.
pub fn sample_observations(world: &SyntheticWorld, seed: u64) -> Observations {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clicks = Vec::with_capacity(world.len());
    let mut conversions = Vec::with_capacity(world.len());
    for (&p, &q) in world.propensity.iter().zip(&world.conversion_prob) {
        clicks.push(rng.random::<f64>() < p);
        conversions.push(rng.random::<f64>() < q);
    }
    Observations { clicks, conversions }
}
