//! Supervised training of the feature extractor against spectral losses,
//! with ADAM updates and binary checkpoints.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{augment_rotation, input_features, ExtractorNet};
use crate::fmap::{solve_backward, solve_regularized, spectral_loss, GroundTruthMap, SolveContext};
use crate::mesh::{build_hierarchy, Mesh};
use crate::spectral::{project, SpectralBasis};
use crate::{Error, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-8;

/// Grid parameters used to build per-shape hierarchies during training.
#[derive(Debug, Clone, Copy)]
pub struct GridParams {
    pub base_cell: f64,
}

/// One shape as the trainer sees it: geometry plus a precomputed spectral
/// basis already truncated to the training width.
pub struct ShapeInputs {
    pub mesh: Mesh,
    pub basis: SpectralBasis,
}

/// A supervised training pair with its ground-truth functional map.
pub struct TrainPair<'a> {
    pub source: &'a ShapeInputs,
    pub target: &'a ShapeInputs,
    pub gt: &'a GroundTruthMap,
}

/// Optimizer state: flat parameters, ADAM moments, schedule and seed.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr_initial: f64,
    pub lr_final: f64,
    pub total_steps: u64,
    pub seed: u64,
}

impl TrainState {
    pub fn new(
        net: &ExtractorNet,
        seed: u64,
        lr_initial: f64,
        lr_final: f64,
        total_steps: u64,
    ) -> Self {
        let params = net.init_params(seed);
        let count = params.len();
        TrainState {
            params,
            m: vec![0.0; count],
            v: vec![0.0; count],
            step: 0,
            lr_initial,
            lr_final,
            total_steps,
            seed,
        }
    }

    /// Rebuild from checkpoint data; schedule and seed come from the config.
    pub fn from_checkpoint(
        data: CheckpointData,
        seed: u64,
        lr_initial: f64,
        lr_final: f64,
        total_steps: u64,
    ) -> Self {
        TrainState {
            params: data.params.iter().map(|&p| p as f64).collect(),
            m: data.m.iter().map(|&p| p as f64).collect(),
            v: data.v.iter().map(|&p| p as f64).collect(),
            step: data.step,
            lr_initial,
            lr_final,
            total_steps,
            seed,
        }
    }
}

/// Log-linear interpolation from the initial to the final learning rate over
/// the configured step budget.
pub fn learning_rate(state: &TrainState) -> f64 {
    let frac = if state.total_steps == 0 {
        0.0
    } else {
        (state.step as f64 / state.total_steps as f64).min(1.0)
    };
    if state.lr_initial <= 0.0 || state.lr_final <= 0.0 {
        // Degenerate schedules (e.g. a zero rate) fall back to linear.
        return state.lr_initial * (1.0 - frac) + state.lr_final * frac;
    }
    state.lr_initial * (state.lr_final / state.lr_initial).powf(frac)
}

/// Loss and parameter gradient of one pair: Siamese forward, projection,
/// regularized solve, spectral loss, full backward chain. `seed`, `step` and
/// `pair_index` only steer the augmentation draw.
pub fn pair_loss_and_grad(
    net: &ExtractorNet,
    params: &[f64],
    pair: &TrainPair<'_>,
    lambda: f64,
    grid: GridParams,
    augment: bool,
    seed: u64,
    step: u64,
    pair_index: usize,
) -> Result<(f64, Vec<f64>)> {
    let shape_pass = |shape: &ShapeInputs, role: u64| -> Result<ShapePass> {
        let mesh = if augment {
            let mix = seed
                ^ step.wrapping_mul(0x9e3779b97f4a7c15)
                ^ (pair_index as u64).wrapping_mul(0x517cc1b727220a95)
                ^ role.wrapping_mul(0x2545f4914f6cdd1d);
            let mut rng = ChaCha8Rng::seed_from_u64(mix);
            augment_rotation(&shape.mesh, &mut rng)
        } else {
            shape.mesh.clone()
        };
        let hierarchy = build_hierarchy(&mesh.point_cloud(), grid.base_cell, net.num_levels())?;
        let input = input_features(&mesh);
        let (values, trace) = net.forward(params, &hierarchy, &input)?;
        let field = crate::spectral::DescriptorField {
            values,
            kind: crate::spectral::DescriptorKind::Learned,
        };
        let coeffs = project(&shape.basis, &field)?;
        Ok(ShapePass {
            hierarchy,
            trace,
            coeffs,
        })
    };

    let src = shape_pass(pair.source, 1)?;
    let tgt = shape_pass(pair.target, 2)?;

    let mut ctx = SolveContext::new(
        src.coeffs,
        tgt.coeffs,
        pair.source.basis.evals.clone(),
        pair.target.basis.evals.clone(),
        lambda,
    )?;
    let c = solve_regularized(&mut ctx)?;
    let (loss, d_c) = spectral_loss(&c, pair.gt)?;
    let (d_a, d_b) = solve_backward(&mut ctx, &c, &d_c)?;

    // d(coeffs)/d(field): coeffs = Phi' M F, so dF = M Phi dA.
    let field_grad = |basis: &SpectralBasis, d_coeffs: &DMatrix<f64>| -> DMatrix<f64> {
        let mut g = &basis.phi * d_coeffs;
        for (mut row, &m) in g.row_iter_mut().zip(basis.mass.iter()) {
            row *= m;
        }
        g
    };
    let d_f = field_grad(&pair.source.basis, &d_a);
    let d_g = field_grad(&pair.target.basis, &d_b);

    let mut grad = net.backward(params, &src.hierarchy, &src.trace, &d_f)?;
    let grad_t = net.backward(params, &tgt.hierarchy, &tgt.trace, &d_g)?;
    for (a, b) in grad.iter_mut().zip(&grad_t) {
        *a += b;
    }
    Ok((loss, grad))
}

struct ShapePass {
    hierarchy: crate::mesh::SamplingHierarchy,
    trace: super::ForwardTrace,
    coeffs: DMatrix<f64>,
}

/// One optimizer step over a batch of pairs: mean loss and gradient, then a
/// single bias-corrected ADAM update. Pair gradients are reduced in pair
/// index order, so results do not depend on the thread count.
pub fn train_step(
    net: &ExtractorNet,
    state: &mut TrainState,
    pairs: &[TrainPair<'_>],
    lambda: f64,
    grid: GridParams,
    augment: bool,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Dimension("empty batch".into()));
    }
    let contributions: Vec<Result<(f64, Vec<f64>)>> = pairs
        .par_iter()
        .enumerate()
        .map(|(pi, pair)| {
            pair_loss_and_grad(
                net,
                &state.params,
                pair,
                lambda,
                grid,
                augment,
                state.seed,
                state.step,
                pi,
            )
        })
        .collect();

    let scale = 1.0 / pairs.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; state.params.len()];
    for contribution in contributions {
        let (l, g) = contribution?;
        loss += l * scale;
        for (dst, src) in grad.iter_mut().zip(&g) {
            *dst += src * scale;
        }
    }
    if !loss.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss {loss} at step {}",
            state.step
        )));
    }

    adam_update(state, &grad);
    state.step += 1;
    Ok(loss)
}

fn adam_update(state: &mut TrainState, grad: &[f64]) {
    let lr = learning_rate(state);
    let t = (state.step + 1) as i32;
    let bias1 = 1.0 - BETA1.powi(t);
    let bias2 = 1.0 - BETA2.powi(t);
    for i in 0..state.params.len() {
        let g = grad[i];
        state.m[i] = BETA1 * state.m[i] + (1.0 - BETA1) * g;
        state.v[i] = BETA2 * state.v[i] + (1.0 - BETA2) * g * g;
        let m_hat = state.m[i] / bias1;
        let v_hat = state.v[i] / bias2;
        state.params[i] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const MAGIC: &[u8; 4] = b"KPW1";

/// Parameters and optimizer moments as stored on disk (32-bit floats).
pub struct CheckpointData {
    pub params: Vec<f32>,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub step: u64,
}

/// Binary layout: magic `KPW1`, 32-byte config digest, `u64` parameter
/// count, then `f32` parameters, first moments, second moments, and the
/// `u64` step counter. Little-endian.
pub fn write_checkpoint(
    path: impl AsRef<Path>,
    state: &TrainState,
    config_digest: &[u8; 32],
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(config_digest)?;
    out.write_all(&(state.params.len() as u64).to_le_bytes())?;
    for series in [&state.params, &state.m, &state.v] {
        for &x in series.iter() {
            out.write_all(&(x as f32).to_le_bytes())?;
        }
    }
    out.write_all(&state.step.to_le_bytes())?;
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<(CheckpointData, [u8; 32])> {
    let path = path.as_ref();
    let format_err = |message: &str| Error::Format {
        path: path.display().to_string(),
        message: message.into(),
    };
    let mut input = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(format_err("bad magic"));
    }
    let mut digest = [0u8; 32];
    input.read_exact(&mut digest)?;
    let mut u64buf = [0u8; 8];
    input.read_exact(&mut u64buf)?;
    let count = u64::from_le_bytes(u64buf) as usize;

    let mut read_f32s = |count: usize| -> Result<Vec<f32>> {
        let mut buf = vec![0u8; count * 4];
        input.read_exact(&mut buf)?;
        Ok(buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };
    let params = read_f32s(count)?;
    let m = read_f32s(count)?;
    let v = read_f32s(count)?;
    input.read_exact(&mut u64buf)?;
    let step = u64::from_le_bytes(u64buf);

    Ok((CheckpointData { params, m, v, step }, digest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::ExtractorConfig;
    use crate::fmap::{gt_from_pointmap, Provenance};
    use crate::spectral::{cotan_laplacian, eigendecompose};
    use rand::Rng;

    fn tiny_net() -> ExtractorNet {
        ExtractorNet::new(ExtractorConfig {
            block_dims: vec![6, 8],
            up_dims: vec![8],
            kernel_points: 5,
            radius_mult: 2.5,
            sigma_mult: 1.0,
            leaky_slope: 0.1,
        })
        .unwrap()
    }

    fn shape_inputs(mesh: Mesh, k: usize) -> ShapeInputs {
        let basis = eigendecompose(&cotan_laplacian(&mesh).unwrap(), k).unwrap();
        ShapeInputs { mesh, basis }
    }

    fn identity_gt(a: &ShapeInputs, b: &ShapeInputs) -> GroundTruthMap {
        let n = b.mesh.vertex_count();
        let t = crate::convert::PointMap::new((0..n).collect(), a.mesh.vertex_count()).unwrap();
        gt_from_pointmap(&a.basis, &b.basis, &t).unwrap()
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let net = tiny_net();
        let base = crate::synth::bumpy_sphere(6, 10, 71);
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let deformed = crate::synth::smooth_deform(&base, 0.05, &mut rng);
        let k = 6;
        let source = shape_inputs(base, k);
        let target = shape_inputs(deformed, k);
        let gt = identity_gt(&source, &target);
        let pair = TrainPair {
            source: &source,
            target: &target,
            gt: &gt,
        };

        let mut state = TrainState::new(&net, 5, 0.0, 0.0, 10);
        let before = state.params.clone();
        let loss = train_step(&net, &mut state, &[pair], 1e-3, GridParams { base_cell: 0.4 }, false)
            .unwrap();
        assert!(loss.is_finite() && loss > 0.0);
        assert_eq!(state.params, before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let net = tiny_net();
        let mut state = TrainState::new(&net, 5, 1e-3, 1e-4, 10);
        let before = state.params.clone();
        let zero = vec![0.0; state.params.len()];
        adam_update(&mut state, &zero);
        assert_eq!(state.params, before);
    }

    #[test]
    fn learning_rate_schedule_endpoints() {
        let net = tiny_net();
        let mut state = TrainState::new(&net, 5, 1e-3, 1e-4, 100);
        assert!((learning_rate(&state) - 1e-3).abs() < 1e-15);
        state.step = 100;
        assert!((learning_rate(&state) - 1e-4).abs() < 1e-12);
        state.step = 50;
        let mid = learning_rate(&state);
        // Log-linear midpoint is the geometric mean.
        assert!((mid - (1e-3f64 * 1e-4).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn training_reduces_loss_on_identity_pair() {
        let net = tiny_net();
        let base = crate::synth::bumpy_sphere(6, 10, 72);
        let mut rng = ChaCha8Rng::seed_from_u64(103);
        let deformed = crate::synth::smooth_deform(&base, 0.05, &mut rng);
        let k = 6;
        let source = shape_inputs(base, k);
        let target = shape_inputs(deformed, k);
        let gt = identity_gt(&source, &target);

        let mut state = TrainState::new(&net, 5, 1e-3, 1e-3, 30);
        let grid = GridParams { base_cell: 0.4 };
        let mut first = 0.0;
        let mut last = 0.0;
        for step in 0..30 {
            let pair = TrainPair {
                source: &source,
                target: &target,
                gt: &gt,
            };
            let loss = train_step(&net, &mut state, &[pair], 1e-3, grid, false).unwrap();
            if step == 0 {
                first = loss;
            }
            last = loss;
        }
        assert!(
            last < first,
            "loss did not decrease: first {first}, last {last}"
        );
    }

    /// End-to-end gradient through the whole pipeline (extractor,
    /// projection, regularized solve, spectral loss) against central finite
    /// differences on a ~60-vertex pair.
    #[test]
    fn end_to_end_gradient_matches_finite_differences() {
        let net = tiny_net();
        let base = crate::synth::bumpy_sphere(6, 10, 73); // 62 vertices
        let mut rng = ChaCha8Rng::seed_from_u64(107);
        let deformed = crate::synth::smooth_deform(&base, 0.05, &mut rng);
        let k = 10;
        let source = shape_inputs(base, k);
        let target = shape_inputs(deformed, k);
        let gt = identity_gt(&source, &target);
        let grid = GridParams { base_cell: 0.4 };
        let lambda = 1e-3;

        let params = net.init_params(11);
        let pair = TrainPair {
            source: &source,
            target: &target,
            gt: &gt,
        };
        let (_, grad) =
            pair_loss_and_grad(&net, &params, &pair, lambda, grid, false, 0, 0, 0).unwrap();

        let value = |p: &[f64]| -> f64 {
            let pair = TrainPair {
                source: &source,
                target: &target,
                gt: &gt,
            };
            pair_loss_and_grad(&net, p, &pair, lambda, grid, false, 0, 0, 0)
                .unwrap()
                .0
        };

        let h = 1e-5;
        let scale = grad.iter().fold(0.0f64, |a, &g| a.max(g.abs())).max(1e-8);
        let mut rng = ChaCha8Rng::seed_from_u64(109);
        for _ in 0..12 {
            let idx = rng.random_range(0..net.param_count());
            let mut plus = params.clone();
            let mut minus = params.clone();
            plus[idx] += h;
            minus[idx] -= h;
            let fd = (value(&plus) - value(&minus)) / (2.0 * h);
            let an = grad[idx];
            let denom = fd.abs().max(an.abs()).max(scale * 1e-3);
            assert!(
                (fd - an).abs() / denom <= 1e-4,
                "param {idx}: fd {fd} vs analytic {an}"
            );
        }
    }

    #[test]
    fn siamese_descriptors_do_not_depend_on_pair_role() {
        // The extractor sees a shape, not a role: feeding the same shape as
        // source or target yields identical descriptors.
        let net = tiny_net();
        let mesh = crate::synth::bumpy_sphere(6, 10, 74);
        let params = net.init_params(13);
        let grid = GridParams { base_cell: 0.4 };
        let run = || -> DMatrix<f64> {
            let hierarchy =
                build_hierarchy(&mesh.point_cloud(), grid.base_cell, net.num_levels()).unwrap();
            net.forward(&params, &hierarchy, &input_features(&mesh)).unwrap().0
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn checkpoint_roundtrip_preserves_state() {
        let net = tiny_net();
        let mut state = TrainState::new(&net, 5, 1e-3, 1e-4, 10);
        state.step = 7;
        for (i, p) in state.params.iter_mut().enumerate() {
            *p = (i as f64 * 0.01).sin();
        }
        let digest = [9u8; 32];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.kpw");
        write_checkpoint(&path, &state, &digest).unwrap();
        let (data, back_digest) = read_checkpoint(&path).unwrap();
        assert_eq!(back_digest, digest);
        assert_eq!(data.step, 7);
        assert_eq!(data.params.len(), state.params.len());
        let restored = TrainState::from_checkpoint(data, 5, 1e-3, 1e-4, 10);
        assert_eq!(restored.step, 7);
        for (a, b) in restored.params.iter().zip(&state.params) {
            assert!((a - b).abs() <= (b.abs() * 1e-7).max(1e-7), "f32 rounding only");
        }
        let gt = GroundTruthMap {
            map: crate::fmap::FuncMap::identity(2),
            provenance: Provenance::Loaded,
        };
        let _ = gt;
    }
}
