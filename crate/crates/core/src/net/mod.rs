//! The learnable UGrid correction network.
//!
//! A recursive, bias-free, purely linear convolutional V-cycle. At every
//! level the input features are smoothed by `pre` convolutions, pooled to
//! the 2x coarser grid, corrected recursively, upsampled, smoothed by `post`
//! convolutions and added to the level input. The finest level lifts the
//! 1-channel residual to `channels` feature maps first and projects back to
//! one channel last; its skip connection adds the (broadcast) residual
//! itself. Every convolution and every grid transfer is followed by
//! multiplication with the interior mask of its level.
//!
//! Recursion stops when the next grid would fall below side 5, even if
//! `depth` allows more levels; the parameters of unused levels are inert.

mod checkpoint;
mod ops;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, CHECKPOINT_VERSION};
pub use ops::ConvWeight;

use crate::error::{Error, Result};
use crate::grid::{coarser_side, GridField, InteriorMask};
use crate::multigrid::coarsen_mask;
use ops::Features;

pub const DEFAULT_DEPTH: usize = 6;
pub const DEFAULT_CHANNELS: usize = 8;
pub const DEFAULT_CONVS_PER_STAGE: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct LevelParams {
    pub pre: Vec<ConvWeight>,
    pub post: Vec<ConvWeight>,
}

/// All learnable weights. There are no bias terms.
#[derive(Clone, Debug, PartialEq)]
pub struct UGridParams {
    pub depth: usize,
    pub channels: usize,
    /// 1 -> `channels`
    pub lift: ConvWeight,
    pub levels: Vec<LevelParams>,
    /// `channels` -> 1
    pub project: ConvWeight,
    /// Seed the weights were initialized from, recorded in checkpoints.
    pub seed: u64,
}

impl UGridParams {
    /// All-zero parameters of the given shape.
    pub fn zeros(depth: usize, channels: usize, convs_per_stage: usize) -> Self {
        let level = LevelParams {
            pre: vec![ConvWeight::zeros(channels, channels); convs_per_stage],
            post: vec![ConvWeight::zeros(channels, channels); convs_per_stage],
        };
        Self {
            depth,
            channels,
            lift: ConvWeight::zeros(channels, 1),
            levels: vec![level; depth],
            project: ConvWeight::zeros(1, channels),
            seed: 0,
        }
    }

    pub fn convs_per_stage(&self) -> (usize, usize) {
        self.levels
            .first()
            .map(|l| (l.pre.len(), l.post.len()))
            .unwrap_or((0, 0))
    }

    /// Weight tensors in canonical order: lift, then per level its pre and
    /// post convolutions, then project.
    pub fn tensors(&self) -> Vec<(String, &ConvWeight)> {
        let mut out = vec![("lift".to_string(), &self.lift)];
        for (l, level) in self.levels.iter().enumerate() {
            for (k, w) in level.pre.iter().enumerate() {
                out.push((format!("level{l}.pre{k}"), w));
            }
            for (k, w) in level.post.iter().enumerate() {
                out.push((format!("level{l}.post{k}"), w));
            }
        }
        out.push(("project".to_string(), &self.project));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut ConvWeight> {
        let mut out = vec![&mut self.lift];
        for level in self.levels.iter_mut() {
            out.extend(level.pre.iter_mut());
            out.extend(level.post.iter_mut());
        }
        out.push(&mut self.project);
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, w)| w.w.len()).sum()
    }

    /// Parameter count implied by the architecture.
    pub fn expected_param_count(depth: usize, channels: usize, convs_per_stage: usize) -> usize {
        9 * channels * 2 + depth * 2 * convs_per_stage * 9 * channels * channels
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|(_, w)| w.w.iter().copied()).collect()
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "flat vector has {} entries, parameters have {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut at = 0;
        for t in self.tensors_mut() {
            let len = t.w.len();
            t.w.copy_from_slice(&flat[at..at + len]);
            at += len;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, w)| w.w.iter().all(|v| v.is_finite()))
    }

    /// Checks that `other` has exactly this shape.
    pub fn check_shape(&self, other: &UGridParams) -> Result<()> {
        if self.depth != other.depth {
            return Err(Error::Shape(format!(
                "depth {} vs {}",
                self.depth, other.depth
            )));
        }
        if self.channels != other.channels {
            return Err(Error::Shape(format!(
                "channels {} vs {}",
                self.channels, other.channels
            )));
        }
        for ((name, a), (_, b)) in self.tensors().into_iter().zip(other.tensors()) {
            if (a.c_out, a.c_in, a.w.len()) != (b.c_out, b.c_in, b.w.len()) {
                return Err(Error::Shape(format!("tensor {name} differs")));
            }
        }
        if self.tensors().len() != other.tensors().len() {
            return Err(Error::Shape("convolution counts differ".into()));
        }
        Ok(())
    }
}

/// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` with `fan_in = 9 c_in`,
/// drawn in canonical tensor order from a seeded ChaCha8 stream.
pub fn init_params(depth: usize, channels: usize, seed: u64) -> UGridParams {
    init_params_with(depth, channels, DEFAULT_CONVS_PER_STAGE, seed)
}

pub fn init_params_with(depth: usize, channels: usize, convs_per_stage: usize, seed: u64) -> UGridParams {
    let mut params = UGridParams::zeros(depth, channels, convs_per_stage);
    params.seed = seed;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in params.tensors_mut() {
        let bound = 1.0 / ((9 * t.c_in) as f64).sqrt();
        for w in t.w.iter_mut() {
            *w = rng.random_range(-bound..=bound);
        }
    }
    params
}

/// Interior masks for every level the network visits on a given grid.
#[derive(Clone, Debug)]
pub struct MaskPyramid {
    masks: Vec<InteriorMask>,
}

impl MaskPyramid {
    pub fn build(mask: &InteriorMask, depth: usize) -> Result<Self> {
        let mut masks = vec![mask.clone()];
        while masks.len() < depth {
            let last = masks.last().unwrap();
            if coarser_side(last.n()).is_none() {
                break;
            }
            masks.push(coarsen_mask(last)?);
        }
        Ok(Self { masks })
    }

    pub fn levels(&self) -> usize {
        self.masks.len()
    }

    pub fn finest(&self) -> &InteriorMask {
        &self.masks[0]
    }

    fn mask(&self, l: usize) -> &[f64] {
        self.masks[l].as_slice()
    }
}

#[derive(Clone, Debug, Default)]
struct LevelTape {
    pre_inputs: Vec<Features>,
    post_inputs: Vec<Features>,
}

/// Forward intermediates needed by [`backward`].
#[derive(Clone, Debug)]
pub struct Tape {
    n: usize,
    depth: usize,
    channels: usize,
    used_levels: usize,
    /// gated residual, the lift input
    input: Features,
    levels: Vec<LevelTape>,
    project_input: Features,
    output: GridField,
}

impl Tape {
    pub fn output(&self) -> &GridField {
        &self.output
    }

    pub fn used_levels(&self) -> usize {
        self.used_levels
    }
}

/// Gradients of a scalar loss with respect to the weights and to the
/// residual input.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub params: UGridParams,
    pub input: GridField,
}

/// Computes the correction `delta` for residual `r`.
pub fn forward(r: &GridField, interior: &InteriorMask, params: &UGridParams) -> Result<GridField> {
    let pyramid = MaskPyramid::build(interior, params.depth)?;
    Ok(forward_taped(r, &pyramid, params)?.output)
}

pub fn forward_with(r: &GridField, pyramid: &MaskPyramid, params: &UGridParams) -> Result<GridField> {
    Ok(forward_taped(r, pyramid, params)?.output)
}

/// Forward pass recording a [`Tape`].
pub fn forward_taped(r: &GridField, pyramid: &MaskPyramid, params: &UGridParams) -> Result<Tape> {
    let n = r.n();
    if n < 5 {
        return Err(Error::GridTooSmall { n, min: 5 });
    }
    r.check_same(pyramid.finest().n())?;
    if params.depth == 0 || params.levels.len() != params.depth {
        return Err(Error::Shape("network needs at least one level".into()));
    }
    let used_levels = pyramid.levels().min(params.depth);
    let mut levels = vec![LevelTape::default(); used_levels];

    let mut x = Features {
        c: 1,
        n,
        data: r.as_slice().to_vec(),
    };
    x.gate(pyramid.mask(0));
    let mut z = params.lift.forward(&x);
    z.gate(pyramid.mask(0));

    let mut y = body_forward(0, z, pyramid, params, used_levels, &mut levels);
    for k in 0..params.channels {
        for (a, &b) in y.channel_mut(k).iter_mut().zip(&x.data) {
            *a += b;
        }
    }
    let mut out = params.project.forward(&y);
    out.gate(pyramid.mask(0));

    Ok(Tape {
        n,
        depth: params.depth,
        channels: params.channels,
        used_levels,
        input: x,
        levels,
        project_input: y,
        output: GridField::from_raw(n, out.data),
    })
}

/// Level body without the skip connection.
fn body_forward(
    l: usize,
    z: Features,
    pyramid: &MaskPyramid,
    params: &UGridParams,
    used: usize,
    tape: &mut [LevelTape],
) -> Features {
    let mask = pyramid.mask(l);
    let lp = &params.levels[l];
    let mut h = z;
    for conv in &lp.pre {
        let mut next = conv.forward(&h);
        next.gate(mask);
        tape[l].pre_inputs.push(std::mem::replace(&mut h, next));
    }
    if l + 1 < used {
        let mut d = h.pool();
        d.gate(pyramid.mask(l + 1));
        let mut e = body_forward(l + 1, d.clone(), pyramid, params, used, tape);
        e.add_assign(&d);
        h = e.upsample();
        h.gate(mask);
    }
    for conv in &lp.post {
        let mut next = conv.forward(&h);
        next.gate(mask);
        tape[l].post_inputs.push(std::mem::replace(&mut h, next));
    }
    h
}

/// Reverse pass: `upstream` is the loss gradient with respect to the
/// network output.
pub fn backward(
    tape: &Tape,
    pyramid: &MaskPyramid,
    params: &UGridParams,
    upstream: &GridField,
) -> Result<Gradients> {
    if tape.depth != params.depth || tape.channels != params.channels {
        return Err(Error::TapeMismatch(format!(
            "tape depth/channels {}/{} vs params {}/{}",
            tape.depth, tape.channels, params.depth, params.channels
        )));
    }
    for (l, lt) in tape.levels.iter().enumerate() {
        let lp = &params.levels[l];
        if lt.pre_inputs.len() != lp.pre.len() || lt.post_inputs.len() != lp.post.len() {
            return Err(Error::TapeMismatch(format!("convolution count at level {l}")));
        }
    }
    upstream.check_same(tape.n)?;
    if pyramid.finest().n() != tape.n || pyramid.levels() < tape.used_levels {
        return Err(Error::TapeMismatch("mask pyramid does not match tape".into()));
    }

    let (npre, npost) = params.convs_per_stage();
    let mut grads = UGridParams::zeros(params.depth, params.channels, npre.max(npost));
    // shapes follow params even if pre/post counts differ
    for (g, p) in grads.levels.iter_mut().zip(&params.levels) {
        g.pre = p.pre.iter().map(|w| ConvWeight::zeros(w.c_out, w.c_in)).collect();
        g.post = p.post.iter().map(|w| ConvWeight::zeros(w.c_out, w.c_in)).collect();
    }
    grads.seed = params.seed;

    let mask0 = pyramid.mask(0);
    let mut g_out = Features {
        c: 1,
        n: tape.n,
        data: upstream.as_slice().to_vec(),
    };
    g_out.gate(mask0);
    let g_y = params.project.backward(&tape.project_input, &g_out, &mut grads.project);

    // broadcast skip
    let mut g_x = Features::zeros(1, tape.n);
    for k in 0..params.channels {
        for (a, &b) in g_x.data.iter_mut().zip(g_y.channel(k)) {
            *a += b;
        }
    }
    let mut g_z = body_backward(0, g_y, pyramid, params, tape, &mut grads);
    g_z.gate(mask0);
    let g_lift = params.lift.backward(&tape.input, &g_z, &mut grads.lift);
    g_x.add_assign(&g_lift);
    g_x.gate(mask0);

    Ok(Gradients {
        params: grads,
        input: GridField::from_raw(tape.n, g_x.data),
    })
}

fn body_backward(
    l: usize,
    g_h: Features,
    pyramid: &MaskPyramid,
    params: &UGridParams,
    tape: &Tape,
    grads: &mut UGridParams,
) -> Features {
    let mask = pyramid.mask(l);
    let lp = &params.levels[l];
    let lt = &tape.levels[l];
    let mut g = g_h;
    for k in (0..lp.post.len()).rev() {
        g.gate(mask);
        g = lp.post[k].backward(&lt.post_inputs[k], &g, &mut grads.levels[l].post[k]);
    }
    if l + 1 < tape.used_levels {
        g.gate(mask);
        let g_e = g.upsample_adjoint();
        let mut g_d = body_backward(l + 1, g_e.clone(), pyramid, params, tape, grads);
        g_d.add_assign(&g_e);
        g_d.gate(pyramid.mask(l + 1));
        g = g_d.pool_adjoint(mask.len().isqrt());
    }
    for k in (0..lp.pre.len()).rev() {
        g.gate(mask);
        g = lp.pre[k].backward(&lt.pre_inputs[k], &g, &mut grads.levels[l].pre[k]);
    }
    g
}
