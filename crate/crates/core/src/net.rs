//! Reference next-token policy network: two token embeddings concatenated
//! with numeric context features, two tanh hidden layers of width 128, and a
//! linear head over the vocabulary. Forward and backward passes are written
//! out by hand over a flat parameter vector so the trainer, the gradient
//! checks, and the checkpoint format all share one layout.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::PolicyContext;
use crate::rng::StreamKey;

pub const EMBED_DIM: usize = 16;
pub const TOKEN_HISTORY: usize = 2;
pub const NUMERIC_DIM: usize = 2 + 8 * 4 + 2;
pub const HIDDEN: usize = 128;

// Fixed feature scales keep tanh units in a sensible range.
const SPEED_SCALE: f64 = 20.0;
const REL_POS_SCALE: f64 = 50.0;
const REL_LAT_SCALE: f64 = 10.0;
const LATERAL_SCALE: f64 = 3.6;
const EDGE_SCALE: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub token_history: usize,
    pub numeric_dim: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub activation: String,
}

impl Architecture {
    pub fn new(vocab_size: usize) -> Self {
        Architecture {
            vocab_size,
            embed_dim: EMBED_DIM,
            token_history: TOKEN_HISTORY,
            numeric_dim: NUMERIC_DIM,
            hidden1: HIDDEN,
            hidden2: HIDDEN,
            activation: "tanh".to_string(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.token_history * self.embed_dim + self.numeric_dim
    }

    pub fn param_count(&self) -> usize {
        let input = self.input_dim();
        self.vocab_size * self.embed_dim
            + input * self.hidden1
            + self.hidden1
            + self.hidden1 * self.hidden2
            + self.hidden2
            + self.hidden2 * self.vocab_size
            + self.vocab_size
    }

    // Offsets into the flat parameter vector.
    fn off_embed(&self) -> usize {
        0
    }
    fn off_w1(&self) -> usize {
        self.vocab_size * self.embed_dim
    }
    fn off_b1(&self) -> usize {
        self.off_w1() + self.input_dim() * self.hidden1
    }
    fn off_w2(&self) -> usize {
        self.off_b1() + self.hidden1
    }
    fn off_b2(&self) -> usize {
        self.off_w2() + self.hidden1 * self.hidden2
    }
    fn off_w3(&self) -> usize {
        self.off_b2() + self.hidden2
    }
    fn off_b3(&self) -> usize {
        self.off_w3() + self.hidden2 * self.vocab_size
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParameters {
    pub arch: Architecture,
    pub theta: Vec<f64>,
}

impl PolicyParameters {
    /// All-zero parameters: every context maps to uniform logits.
    pub fn zeros(arch: Architecture) -> Self {
        let n = arch.param_count();
        PolicyParameters {
            arch,
            theta: vec![0.0; n],
        }
    }

    /// Random hidden layers, zero output head. The zero head makes the
    /// initial token distribution exactly uniform while leaving nonzero
    /// signal for gradients to reach the lower layers.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        use rand::Rng;
        let mut p = PolicyParameters::zeros(arch);
        let mut rng = StreamKey::new(seed).with_str("policy-init").rng();
        let a = p.arch.clone();
        let emb_bound = 0.1;
        for v in p.theta[a.off_embed()..a.off_w1()].iter_mut() {
            *v = rng.random_range(-emb_bound..emb_bound);
        }
        let w1_bound = 1.0 / (a.input_dim() as f64).sqrt();
        for v in p.theta[a.off_w1()..a.off_b1()].iter_mut() {
            *v = rng.random_range(-w1_bound..w1_bound);
        }
        let w2_bound = 1.0 / (a.hidden1 as f64).sqrt();
        for v in p.theta[a.off_w2()..a.off_b2()].iter_mut() {
            *v = rng.random_range(-w2_bound..w2_bound);
        }
        // b1, b2, w3, b3 stay zero.
        p
    }
}

/// Flatten a context into the numeric feature block.
pub fn numeric_features(ctx: &PolicyContext) -> Vec<f64> {
    let mut f = Vec::with_capacity(NUMERIC_DIM);
    f.push(ctx.speed / SPEED_SCALE);
    f.push(ctx.heading_to_lane);
    for n in &ctx.neighbors {
        if n.present {
            f.push(n.rel_x / REL_POS_SCALE);
            f.push(n.rel_y / REL_LAT_SCALE);
            f.push(n.rel_speed / SPEED_SCALE);
            f.push(1.0);
        } else {
            f.extend_from_slice(&[0.0, 0.0, 0.0, 0.0]);
        }
    }
    f.push(ctx.lateral_offset / LATERAL_SCALE);
    f.push(ctx.edge_distance / EDGE_SCALE);
    f
}

/// Activations saved by the forward pass for reuse in backward.
#[derive(Clone, Debug, Default)]
pub struct ForwardCache {
    pub input: Vec<f64>,
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
}

fn check_shapes(params: &PolicyParameters, tokens: [usize; 2], numeric: &[f64]) -> Result<()> {
    let a = &params.arch;
    if params.theta.len() != a.param_count() {
        return Err(Error::ShapeMismatch {
            detail: format!(
                "theta has {} entries, architecture needs {}",
                params.theta.len(),
                a.param_count()
            ),
        });
    }
    if a.token_history != TOKEN_HISTORY || a.numeric_dim != numeric.len() {
        return Err(Error::ShapeMismatch {
            detail: format!(
                "context provides {} numeric features, architecture expects {}",
                numeric.len(),
                a.numeric_dim
            ),
        });
    }
    for &t in &tokens {
        if t >= a.vocab_size {
            return Err(Error::ShapeMismatch {
                detail: format!("token {} out of vocab range {}", t, a.vocab_size),
            });
        }
    }
    Ok(())
}

/// Forward pass. Writes logits and the activation cache into the buffers.
pub fn forward_into(
    params: &PolicyParameters,
    tokens: [usize; 2],
    numeric: &[f64],
    cache: &mut ForwardCache,
    logits: &mut Vec<f64>,
) -> Result<()> {
    check_shapes(params, tokens, numeric)?;
    let a = &params.arch;
    let th = &params.theta;
    let input_dim = a.input_dim();

    cache.input.clear();
    for (slot, &tok) in tokens.iter().enumerate() {
        let row = a.off_embed() + tok * a.embed_dim;
        cache.input.extend_from_slice(&th[row..row + a.embed_dim]);
        let _ = slot;
    }
    cache.input.extend_from_slice(numeric);
    debug_assert_eq!(cache.input.len(), input_dim);

    cache.h1.clear();
    cache.h1.resize(a.hidden1, 0.0);
    let w1 = a.off_w1();
    let b1 = a.off_b1();
    for (i, &xi) in cache.input.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = w1 + i * a.hidden1;
        for j in 0..a.hidden1 {
            cache.h1[j] += xi * th[row + j];
        }
    }
    for j in 0..a.hidden1 {
        cache.h1[j] = (cache.h1[j] + th[b1 + j]).tanh();
    }

    cache.h2.clear();
    cache.h2.resize(a.hidden2, 0.0);
    let w2 = a.off_w2();
    let b2 = a.off_b2();
    for (i, &hi) in cache.h1.iter().enumerate() {
        let row = w2 + i * a.hidden2;
        for j in 0..a.hidden2 {
            cache.h2[j] += hi * th[row + j];
        }
    }
    for j in 0..a.hidden2 {
        cache.h2[j] = (cache.h2[j] + th[b2 + j]).tanh();
    }

    logits.clear();
    logits.resize(a.vocab_size, 0.0);
    let w3 = a.off_w3();
    let b3 = a.off_b3();
    for (i, &hi) in cache.h2.iter().enumerate() {
        let row = w3 + i * a.vocab_size;
        for j in 0..a.vocab_size {
            logits[j] += hi * th[row + j];
        }
    }
    for j in 0..a.vocab_size {
        logits[j] += th[b3 + j];
    }
    Ok(())
}

/// Convenience forward pass from a full context.
pub fn forward(params: &PolicyParameters, ctx: &PolicyContext) -> Result<Vec<f64>> {
    let numeric = numeric_features(ctx);
    let mut cache = ForwardCache::default();
    let mut logits = Vec::new();
    forward_into(params, ctx.token_history, &numeric, &mut cache, &mut logits)?;
    Ok(logits)
}

/// Accumulate dLoss/dtheta into `grad` given dLoss/dlogits. Must be called
/// with the cache produced by the matching forward pass.
pub fn backward_into(
    params: &PolicyParameters,
    tokens: [usize; 2],
    cache: &ForwardCache,
    dlogits: &[f64],
    grad: &mut [f64],
) {
    let a = &params.arch;
    let th = &params.theta;
    debug_assert_eq!(grad.len(), a.param_count());
    debug_assert_eq!(dlogits.len(), a.vocab_size);

    let w3 = a.off_w3();
    let b3 = a.off_b3();
    let mut dh2 = vec![0.0; a.hidden2];
    for (i, &hi) in cache.h2.iter().enumerate() {
        let row = w3 + i * a.vocab_size;
        let mut acc = 0.0;
        for j in 0..a.vocab_size {
            grad[row + j] += hi * dlogits[j];
            acc += th[row + j] * dlogits[j];
        }
        dh2[i] = acc;
    }
    for j in 0..a.vocab_size {
        grad[b3 + j] += dlogits[j];
    }

    let w2 = a.off_w2();
    let b2 = a.off_b2();
    let mut dpre2 = dh2;
    for (j, d) in dpre2.iter_mut().enumerate() {
        *d *= 1.0 - cache.h2[j] * cache.h2[j];
    }
    let mut dh1 = vec![0.0; a.hidden1];
    for (i, &hi) in cache.h1.iter().enumerate() {
        let row = w2 + i * a.hidden2;
        let mut acc = 0.0;
        for j in 0..a.hidden2 {
            grad[row + j] += hi * dpre2[j];
            acc += th[row + j] * dpre2[j];
        }
        dh1[i] = acc;
    }
    for j in 0..a.hidden2 {
        grad[b2 + j] += dpre2[j];
    }

    let w1 = a.off_w1();
    let b1 = a.off_b1();
    let mut dpre1 = dh1;
    for (j, d) in dpre1.iter_mut().enumerate() {
        *d *= 1.0 - cache.h1[j] * cache.h1[j];
    }
    let mut dinput = vec![0.0; a.input_dim()];
    for (i, di) in dinput.iter_mut().enumerate() {
        let row = w1 + i * a.hidden1;
        let xi = cache.input[i];
        let mut acc = 0.0;
        for j in 0..a.hidden1 {
            grad[row + j] += xi * dpre1[j];
            acc += th[row + j] * dpre1[j];
        }
        *di = acc;
    }
    for j in 0..a.hidden1 {
        grad[b1 + j] += dpre1[j];
    }

    for (slot, &tok) in tokens.iter().enumerate() {
        let row = a.off_embed() + tok * a.embed_dim;
        for e in 0..a.embed_dim {
            grad[row + e] += dinput[slot * a.embed_dim + e];
        }
    }
}

// --- checkpoint format: one JSON header line, then raw little-endian f64s ---

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    arch: Architecture,
    vocab_hash: String,
    param_count: usize,
}

pub fn save_checkpoint(
    params: &PolicyParameters,
    vocab_hash: &str,
    path: &std::path::Path,
) -> Result<()> {
    let header = CheckpointHeader {
        arch: params.arch.clone(),
        vocab_hash: vocab_hash.to_string(),
        param_count: params.theta.len(),
    };
    let mut buf = serde_json::to_vec(&header).map_err(|e| Error::BadConfig {
        detail: format!("checkpoint header: {}", e),
    })?;
    buf.push(b'\n');
    for v in &params.theta {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = std::fs::File::create(path)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(&buf)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<(PolicyParameters, String)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::CorruptCorpus {
            detail: "checkpoint missing header line".to_string(),
        })?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::CorruptCorpus {
            detail: format!("checkpoint header: {}", e),
        })?;
    let body = &bytes[nl + 1..];
    if body.len() != header.param_count * 8 {
        return Err(Error::ShapeMismatch {
            detail: format!(
                "checkpoint body has {} bytes, expected {}",
                body.len(),
                header.param_count * 8
            ),
        });
    }
    let theta: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if header.arch.param_count() != theta.len() {
        return Err(Error::ShapeMismatch {
            detail: "checkpoint parameter count does not match architecture".to_string(),
        });
    }
    Ok((
        PolicyParameters {
            arch: header.arch,
            theta,
        },
        header.vocab_hash,
    ))
}

/// Gradient check for the full network: compares backprop against central
/// finite differences of a cross-entropy head on random (theta, context)
/// probes. Returns the max relative error (denominator floored at 1e-5).
pub fn policy_grad_check(vocab_size: usize, trials: usize, seed: u64) -> f64 {
    use rand::Rng;
    let arch = Architecture::new(vocab_size);
    let n_params = arch.param_count();
    let mut worst: f64 = 0.0;
    let h = 1e-5;

    for trial in 0..trials {
        let mut rng = StreamKey::new(seed).with_str("policy-grad").with_u64(trial as u64).rng();
        let mut params = PolicyParameters::init(arch.clone(), rng.random());
        // Random output head too; the zero init would hide W3 errors.
        {
            let a = params.arch.clone();
            for v in params.theta[a.off_w3()..].iter_mut() {
                *v = rng.random_range(-0.05..0.05);
            }
        }
        let tokens = [
            rng.random_range(0..vocab_size),
            rng.random_range(0..vocab_size),
        ];
        let numeric: Vec<f64> = (0..NUMERIC_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
        let target = rng.random_range(0..vocab_size);

        let mut cache = ForwardCache::default();
        let mut logits = Vec::new();
        forward_into(&params, tokens, &numeric, &mut cache, &mut logits).unwrap();
        let (_, dlogits) = crate::losses::loss_ce(&logits, target).unwrap();
        let mut grad = vec![0.0; n_params];
        backward_into(&params, tokens, &cache, &dlogits, &mut grad);

        // Probe a handful of coordinates from every parameter group.
        let a = &params.arch;
        let groups = [
            (a.off_embed() + tokens[0] * a.embed_dim, a.embed_dim),
            (a.off_w1(), a.off_b1() - a.off_w1()),
            (a.off_b1(), a.hidden1),
            (a.off_w2(), a.off_b2() - a.off_w2()),
            (a.off_b2(), a.hidden2),
            (a.off_w3(), a.off_b3() - a.off_w3()),
            (a.off_b3(), a.vocab_size),
        ];
        let mut coords = Vec::new();
        for &(base, len) in &groups {
            for _ in 0..3 {
                coords.push(base + rng.random_range(0..len));
            }
        }

        let mut scratch_cache = ForwardCache::default();
        let mut scratch_logits = Vec::new();
        let mut loss_at = |params: &PolicyParameters| -> f64 {
            forward_into(
                params,
                tokens,
                &numeric,
                &mut scratch_cache,
                &mut scratch_logits,
            )
            .unwrap();
            crate::losses::loss_ce(&scratch_logits, target).unwrap().0
        };

        for &c in &coords {
            let orig = params.theta[c];
            params.theta[c] = orig + h;
            let up = loss_at(&params);
            params.theta[c] = orig - h;
            let down = loss_at(&params);
            params.theta[c] = orig;
            let numeric_grad = (up - down) / (2.0 * h);
            let denom = grad[c].abs().max(numeric_grad.abs()).max(1e-5);
            worst = worst.max((grad[c] - numeric_grad).abs() / denom);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{NeighborFeature, PolicyContext};

    fn dummy_ctx() -> PolicyContext {
        PolicyContext {
            token_history: [1, 3],
            speed: 18.0,
            heading_to_lane: 0.02,
            neighbors: [NeighborFeature::absent(); 8],
            lateral_offset: 0.3,
            edge_distance: 2.0,
        }
    }

    #[test]
    fn zero_parameters_give_uniform_logits() {
        let params = PolicyParameters::zeros(Architecture::new(32));
        let logits = forward(&params, &dummy_ctx()).unwrap();
        assert_eq!(logits.len(), 32);
        assert!(logits.iter().all(|&z| z == 0.0));
    }

    #[test]
    fn init_keeps_uniform_head() {
        let params = PolicyParameters::init(Architecture::new(64), 9);
        let logits = forward(&params, &dummy_ctx()).unwrap();
        assert!(logits.iter().all(|&z| z == 0.0));
        // ...but hidden layers are non-zero so training can move.
        let a = &params.arch;
        assert!(params.theta[a.off_w1()..a.off_b1()].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn logit_length_matches_vocab() {
        let params = PolicyParameters::init(Architecture::new(512), 1);
        let logits = forward(&params, &dummy_ctx()).unwrap();
        assert_eq!(logits.len(), 512);
    }

    #[test]
    fn token_out_of_range_is_shape_mismatch() {
        let params = PolicyParameters::zeros(Architecture::new(8));
        let mut ctx = dummy_ctx();
        ctx.token_history = [9, 0];
        assert_eq!(forward(&params, &ctx).unwrap_err().code(), "shape-mismatch");
    }

    #[test]
    fn gradcheck_small_net() {
        let worst = policy_grad_check(16, 20, 77);
        assert!(worst < 1e-4, "max relative error {}", worst);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        let params = PolicyParameters::init(Architecture::new(24), 5);
        save_checkpoint(&params, "abc123", &path).unwrap();
        let (loaded, hash) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, params);
        assert_eq!(hash, "abc123");
    }
}
