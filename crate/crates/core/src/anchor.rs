//! Safe manifolds and exclusive anchoring.
//!
//! The safe manifold at a context is the Top-K support of the reference
//! policy. When a token with negative advantage is processed, the anchor set is
//! that manifold minus the token itself, and the virtual anchor ratio
//! `r_anchor = Σ_{k∈S} π_θ(k) / Z_ref` measures how much of the reference's
//! alternative mass the policy still covers.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::grad::{grad_support_mass, LogitGradient};
use crate::policy::{Dist, VocabId};

/// Top-K tokens of a reference distribution, highest probability first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SafeManifold {
    pub members: Vec<VocabId>,
}

impl SafeManifold {
    pub fn contains(&self, token: VocabId) -> bool {
        self.members.contains(&token)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// The `min(k, V)` most probable tokens. Equal probabilities are ordered by
/// ascending token index, so the lower id wins a tie at the K-th rank.
pub fn top_k(dist: &Dist, k: usize) -> Result<SafeManifold> {
    if k < 1 {
        return Err(Error::invalid("Top-K requires k >= 1"));
    }
    let probs = dist.probs();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    // Stable sort on an index-ordered input keeps lower ids first among ties.
    order.sort_by(|a, b| probs[*b].partial_cmp(&probs[*a]).unwrap_or(Ordering::Equal));
    order.truncate(k.min(probs.len()));
    Ok(SafeManifold {
        members: order.into_iter().map(VocabId).collect(),
    })
}

/// Per-token anchor machinery for one negative-advantage token.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorContext {
    pub error_token: VocabId,
    /// `TopK(π_ref) \ {error_token}`, in manifold order.
    pub anchor_set: Vec<VocabId>,
    /// `Z_ref = Σ_{j∈S} π_ref(j)`.
    pub z_ref_mass: f64,
    /// `ω̂_k = π_ref(k) / Z_ref`, aligned with `anchor_set`.
    pub weights: Vec<f64>,
    /// `r_anchor = Σ_{k∈S} π_θ(k) / Z_ref`.
    pub anchor_ratio: f64,
}

impl AnchorContext {
    pub fn contains(&self, token: VocabId) -> bool {
        self.anchor_set.contains(&token)
    }
}

pub fn build_anchor(
    ref_dist: &Dist,
    policy_dist: &Dist,
    error_token: VocabId,
    k: usize,
) -> Result<AnchorContext> {
    if ref_dist.len() != policy_dist.len() {
        return Err(Error::invalid(
            "reference and policy over different vocabularies",
        ));
    }
    ref_dist.check_token(error_token)?;
    let manifold = top_k(ref_dist, k)?;
    let anchor_set: Vec<VocabId> = manifold
        .members
        .into_iter()
        .filter(|t| *t != error_token)
        .collect();
    let z_ref_mass = ref_dist.mass(&anchor_set);
    if anchor_set.is_empty() || z_ref_mass <= 0.0 {
        return Err(Error::DegenerateAnchor { error_token });
    }
    let weights = anchor_set
        .iter()
        .map(|t| ref_dist.prob(*t) / z_ref_mass)
        .collect();
    let anchor_ratio = policy_dist.mass(&anchor_set) / z_ref_mass;
    Ok(AnchorContext {
        error_token,
        anchor_set,
        z_ref_mass,
        weights,
        anchor_ratio,
    })
}

/// `∇_z r_anchor = (1/Z_ref) · ∇_z Σ_{k∈S} π_θ(k)`.
pub fn grad_anchor_ratio(policy_dist: &Dist, anchor: &AnchorContext) -> Result<LogitGradient> {
    Ok(grad_support_mass(policy_dist, &anchor.anchor_set)?.scaled(1.0 / anchor.z_ref_mass))
}
