use std::ops::Range;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::kernels::{
    affine_forward, affine_input_grad, affine_param_grads, left_mul, left_mul_acc, mix_backward,
    mix_forward, swap01, Activation, Batch, MixShape,
};
use crate::dense::{col_major, col_major_mut, gemm, row_major, row_major_mut};
use crate::field::{DomainId, Field};
use crate::spectral::{BasisKind, SpectralBasis};
use crate::training::Normalizer;
use crate::{NormError, Result};

/// Target size of one hidden buffer in [`NormModel::micro_batch`]. Buffers
/// this small are recycled by the allocator instead of being mapped afresh.
pub const MICRO_BATCH_VALUES: usize = 1 << 20;

/// How the hidden layers move between domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Wiring {
    /// Every layer maps the input manifold to itself.
    SameManifold,
    /// Layers before `switch_at` stay on X, layer `switch_at` maps X to Y,
    /// the rest stay on Y.
    CrossManifold { switch_at: usize },
    /// Layers before `switch_at` act on a time signal in a Fourier basis,
    /// layer `switch_at` lifts it to space-time on Y, the rest mix in both
    /// the spatial and the temporal basis.
    TemporalToManifold { switch_at: usize },
}

/// User-facing architecture description consumed by [`build_model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub d_a: usize,
    pub d_u: usize,
    pub width: usize,
    pub layers: usize,
    /// Truncate the spatial bases to this many modes.
    pub modes: Option<usize>,
    /// Truncate the temporal basis to this many modes (must be odd).
    pub time_modes: Option<usize>,
    pub activation: Activation,
    pub p_hidden: Option<usize>,
    pub q_hidden: Option<usize>,
    pub wiring: Wiring,
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(d_a: usize, d_u: usize) -> Self {
        ModelSpec {
            d_a,
            d_u,
            width: 32,
            layers: 4,
            modes: None,
            time_modes: None,
            activation: Activation::Gelu,
            p_hidden: None,
            q_hidden: Some(128),
            wiring: Wiring::SameManifold,
            seed: 0,
        }
    }

    /// 128 modes, width 32, four layers.
    pub fn darcy() -> Self {
        ModelSpec { modes: Some(128), ..ModelSpec::new(1, 1) }
    }

    /// 64 spatial modes, 16 temporal modes, width 16, five layers with the
    /// switch to space-time after two temporal layers. The even temporal
    /// count is rejected by [`build_model`]; set `time_modes` to 17.
    pub fn blood_flow() -> Self {
        ModelSpec {
            width: 16,
            layers: 5,
            modes: Some(64),
            time_modes: Some(16),
            wiring: Wiring::TemporalToManifold { switch_at: 2 },
            ..ModelSpec::new(1, 1)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerKind {
    Spectral { basis_in: usize, basis_out: usize },
    TimeToSpace { time: usize, space: usize },
    SpaceTime { space: usize, time: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDesc {
    pub kind: LayerKind,
    pub activation: Activation,
}

/// Everything that determines the parameter layout. Contains no node
/// counts, so the layout is independent of the discretisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub width: usize,
    /// Channel widths of the lifting network, `[d_a, ..., width]`.
    pub p_dims: Vec<usize>,
    /// Channel widths of the projection network, `[width, ..., d_u]`.
    pub q_dims: Vec<usize>,
    /// Activation between the hidden layers of P and Q.
    pub pointwise_activation: Activation,
    pub layers: Vec<LayerDesc>,
    /// Mode count of every basis slot.
    pub basis_modes: Vec<usize>,
}

impl Architecture {
    pub fn d_a(&self) -> usize {
        self.p_dims[0]
    }

    pub fn d_u(&self) -> usize {
        *self.q_dims.last().unwrap()
    }
}

#[derive(Debug, Clone, Copy)]
struct DenseSlot {
    d_in: usize,
    d_out: usize,
    w: usize,
}

impl DenseSlot {
    fn b(&self) -> usize {
        self.w + self.d_in * self.d_out
    }

    fn end(&self) -> usize {
        self.b() + self.d_out
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerSlot {
    w: usize,
    d_m: usize,
    d_t: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    p: Vec<DenseSlot>,
    layers: Vec<LayerSlot>,
    q: Vec<DenseSlot>,
    total: usize,
}

fn dense_slots(dims: &[usize], off: &mut usize) -> Vec<DenseSlot> {
    dims.windows(2)
        .map(|d| {
            let s = DenseSlot { d_in: d[0], d_out: d[1], w: *off };
            *off = s.end();
            s
        })
        .collect()
}

fn layout(arch: &Architecture) -> Result<Layout> {
    let bad = |m: String| Err(NormError::InvalidSpec(m));
    let w = arch.width;
    if w == 0 || arch.layers.is_empty() {
        return bad("need at least one layer of positive width".into());
    }
    if arch.p_dims.len() < 2 || arch.p_dims[arch.p_dims.len() - 1] != w || arch.p_dims.contains(&0) {
        return bad(format!("lifting widths {:?} must end at {w}", arch.p_dims));
    }
    if arch.q_dims.len() < 2 || arch.q_dims[0] != w || arch.q_dims.contains(&0) {
        return bad(format!("projection widths {:?} must start at {w}", arch.q_dims));
    }
    let nb = arch.basis_modes.len();
    let modes = |i: usize| -> Result<usize> {
        arch.basis_modes
            .get(i)
            .copied()
            .ok_or_else(|| NormError::InvalidSpec(format!("basis slot {i} out of range ({nb} slots)")))
    };
    let mut off = 0;
    let p = dense_slots(&arch.p_dims, &mut off);
    let mut layers = Vec::with_capacity(arch.layers.len());
    for desc in &arch.layers {
        let (d_m, d_t) = match desc.kind {
            LayerKind::Spectral { basis_in, basis_out } => {
                let (a, b) = (modes(basis_in)?, modes(basis_out)?);
                if a != b {
                    return bad(format!("cross-manifold layer needs equal mode counts, got {a} and {b}"));
                }
                (a, 0)
            }
            LayerKind::TimeToSpace { time, space } => {
                modes(time)?;
                (modes(space)?, 0)
            }
            LayerKind::SpaceTime { space, time } => (modes(space)?, modes(time)?),
        };
        let slot = LayerSlot { w: off, d_m, d_t };
        off += w * w + w + d_m * w * w + d_t * w * w;
        layers.push(slot);
    }
    let q = dense_slots(&arch.q_dims, &mut off);
    Ok(Layout { p, layers, q, total: off })
}

/// Node count and domain of the hidden state before and after a layer.
fn layer_domains(kind: LayerKind, bases: &[Arc<SpectralBasis>]) -> ((usize, DomainId), (usize, DomainId)) {
    let plain = |b: &SpectralBasis| (b.n_x(), b.source_id());
    let st = |space: &SpectralBasis, time: &SpectralBasis| {
        (space.n_x() * time.n_x(), DomainId::space_time(space.source_id(), time.n_x()))
    };
    match kind {
        LayerKind::Spectral { basis_in, basis_out } => (plain(&bases[basis_in]), plain(&bases[basis_out])),
        LayerKind::TimeToSpace { time, space } => (plain(&bases[time]), st(&bases[space], &bases[time])),
        LayerKind::SpaceTime { space, time } => {
            let d = st(&bases[space], &bases[time]);
            (d, d)
        }
    }
}

/// A NORM: pointwise lifting, a stack of spectral layers, pointwise
/// projection, with optional fixed input/output normalisation.
#[derive(Debug, Clone)]
pub struct NormModel {
    arch: Architecture,
    bases: Vec<Arc<SpectralBasis>>,
    layout: Layout,
    params: Vec<f64>,
    input_norm: Option<Normalizer>,
    output_norm: Option<Normalizer>,
}

/// Cached intermediates of a batched forward pass.
pub struct Tape {
    batch: usize,
    p: Vec<MlpTrace>,
    layers: Vec<LayerTape>,
    q: Vec<MlpTrace>,
}

/// Input and activation slope of every slot of a pointwise stack, one sample.
type MlpTrace = Vec<(Vec<f64>, Vec<f64>)>;

enum LayerTape {
    Spectral { v: Batch, coeff: Vec<f64>, u: Option<Batch>, slope: Vec<f64> },
    TimeToSpace { coeff: Vec<f64>, u: Batch, slope: Vec<f64> },
    SpaceTime { v: Batch, e: Vec<f64>, e1: Vec<f64>, slope: Vec<f64> },
}

impl LayerTape {
    /// Activation slope at the layer output, filled in by the caller.
    fn slope_mut(&mut self) -> &mut Vec<f64> {
        match self {
            LayerTape::Spectral { slope, .. } | LayerTape::TimeToSpace { slope, .. } | LayerTape::SpaceTime { slope, .. } => slope,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Field,
}

#[derive(Debug, Clone)]
pub struct BatchGradients {
    pub params: Vec<f64>,
    pub inputs: Vec<Field>,
}

fn same_basis(a: &Arc<SpectralBasis>, b: &Arc<SpectralBasis>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

fn truncated(b: &Arc<SpectralBasis>, modes: Option<usize>) -> Result<Arc<SpectralBasis>> {
    match modes {
        None => Ok(b.clone()),
        Some(d) if d == b.d_m() => Ok(b.clone()),
        Some(d) if d > b.d_m() => Err(NormError::InvalidSpec(format!(
            "requested {d} modes but the basis has {}",
            b.d_m()
        ))),
        Some(d) => Ok(Arc::new(b.truncate(d)?)),
    }
}

/// Builds and initialises a model. `basis_in` and `basis_out` must be the
/// same basis for [`Wiring::SameManifold`]; for
/// [`Wiring::TemporalToManifold`] `basis_in` is the Fourier basis of the time
/// grid.
pub fn build_model(
    spec: &ModelSpec,
    basis_in: Arc<SpectralBasis>,
    basis_out: Arc<SpectralBasis>,
) -> Result<NormModel> {
    if spec.d_a == 0 || spec.d_u == 0 || spec.width == 0 || spec.layers == 0 {
        return Err(NormError::InvalidSpec("channel counts, width and layer count must be positive".into()));
    }
    let n = spec.layers;
    let check_switch = |s: usize| {
        if s >= n {
            Err(NormError::InvalidSpec(format!("switch layer {s} outside 0..{n}")))
        } else {
            Ok(())
        }
    };
    let (bases, kinds): (Vec<Arc<SpectralBasis>>, Vec<LayerKind>) = match spec.wiring {
        Wiring::SameManifold => {
            if !same_basis(&basis_in, &basis_out) {
                return Err(NormError::InvalidSpec(
                    "same-manifold wiring needs identical input and output bases".into(),
                ));
            }
            let b = truncated(&basis_in, spec.modes)?;
            (vec![b], vec![LayerKind::Spectral { basis_in: 0, basis_out: 0 }; n])
        }
        Wiring::CrossManifold { switch_at } => {
            check_switch(switch_at)?;
            let (x, y) = (truncated(&basis_in, spec.modes)?, truncated(&basis_out, spec.modes)?);
            if x.d_m() != y.d_m() {
                return Err(NormError::InvalidSpec(format!(
                    "cross-manifold bases need equal mode counts, got {} and {}",
                    x.d_m(),
                    y.d_m()
                )));
            }
            let kinds = (0..n)
                .map(|i| match i.cmp(&switch_at) {
                    std::cmp::Ordering::Less => LayerKind::Spectral { basis_in: 0, basis_out: 0 },
                    std::cmp::Ordering::Equal => LayerKind::Spectral { basis_in: 0, basis_out: 1 },
                    std::cmp::Ordering::Greater => LayerKind::Spectral { basis_in: 1, basis_out: 1 },
                })
                .collect();
            (vec![x, y], kinds)
        }
        Wiring::TemporalToManifold { switch_at } => {
            check_switch(switch_at)?;
            if basis_in.kind() != BasisKind::Fourier {
                return Err(NormError::InvalidSpec("temporal wiring needs a Fourier input basis".into()));
            }
            let d_t = spec.time_modes.unwrap_or(basis_in.d_m());
            if d_t % 2 == 0 {
                return Err(NormError::InvalidSpec(format!(
                    "temporal mode count must be odd (constant plus cos/sin pairs), got {d_t}"
                )));
            }
            let t = truncated(&basis_in, Some(d_t))?;
            let y = truncated(&basis_out, spec.modes)?;
            let kinds = (0..n)
                .map(|i| match i.cmp(&switch_at) {
                    std::cmp::Ordering::Less => LayerKind::Spectral { basis_in: 0, basis_out: 0 },
                    std::cmp::Ordering::Equal => LayerKind::TimeToSpace { time: 0, space: 1 },
                    std::cmp::Ordering::Greater => LayerKind::SpaceTime { space: 1, time: 0 },
                })
                .collect();
            (vec![t, y], kinds)
        }
    };
    let layers = kinds
        .into_iter()
        .enumerate()
        .map(|(i, kind)| LayerDesc {
            kind,
            activation: if i + 1 == n { Activation::Identity } else { spec.activation },
        })
        .collect();
    let mut p_dims = vec![spec.d_a];
    p_dims.extend(spec.p_hidden);
    p_dims.push(spec.width);
    let mut q_dims = vec![spec.width];
    q_dims.extend(spec.q_hidden);
    q_dims.push(spec.d_u);
    let arch = Architecture {
        width: spec.width,
        p_dims,
        q_dims,
        pointwise_activation: spec.activation,
        layers,
        basis_modes: bases.iter().map(|b| b.d_m()).collect(),
    };
    let mut model = NormModel::new(arch, bases)?;
    model.initialize(spec.seed);
    Ok(model)
}

pub fn param_count(model: &NormModel) -> usize {
    model.param_count()
}

pub fn forward(model: &NormModel, a: &Field) -> Result<Field> {
    model.forward(a)
}

pub fn backward(model: &NormModel, a: &Field, g: &Field) -> Result<Gradients> {
    model.backward(a, g)
}

impl NormModel {
    /// Zero-initialised model with the given architecture and bases.
    pub fn new(arch: Architecture, bases: Vec<Arc<SpectralBasis>>) -> Result<Self> {
        let layout = layout(&arch)?;
        if bases.len() != arch.basis_modes.len() {
            return Err(NormError::InvalidSpec(format!(
                "architecture has {} basis slots, {} bases given",
                arch.basis_modes.len(),
                bases.len()
            )));
        }
        for (i, (b, &d)) in bases.iter().zip(&arch.basis_modes).enumerate() {
            if b.d_m() != d {
                return Err(NormError::InvalidSpec(format!(
                    "basis slot {i} expects {d} modes, basis has {}",
                    b.d_m()
                )));
            }
        }
        for w in arch.layers.windows(2) {
            let (_, out) = layer_domains(w[0].kind, &bases);
            let (inp, _) = layer_domains(w[1].kind, &bases);
            if out != inp {
                return Err(NormError::InvalidSpec("consecutive layers act on different domains".into()));
            }
        }
        for desc in &arch.layers {
            if let LayerKind::TimeToSpace { time, .. } | LayerKind::SpaceTime { time, .. } = desc.kind {
                if bases[time].d_m() % 2 == 0 {
                    return Err(NormError::InvalidSpec("temporal mode count must be odd".into()));
                }
            }
        }
        let total = layout.total;
        Ok(NormModel {
            arch,
            bases,
            layout,
            params: vec![0.0; total],
            input_norm: None,
            output_norm: None,
        })
    }

    /// Uniform `±1/√fan_in` pointwise weights, zero biases, Gaussian mode
    /// mixing with standard deviation `1/(width √d_m)`, and temporal mixing
    /// initialised at the identity plus noise of the same scale.
    pub fn initialize(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = self.arch.width;
        let params = &mut self.params;
        params.iter_mut().for_each(|p| *p = 0.0);
        let uniform = |params: &mut [f64], fan_in: usize, rng: &mut ChaCha8Rng| {
            let a = 1.0 / (fan_in as f64).sqrt();
            for p in params {
                *p = rng.random_range(-a..a);
            }
        };
        for s in &self.layout.p {
            uniform(&mut params[s.w..s.b()], s.d_in, &mut rng);
        }
        for s in &self.layout.layers {
            uniform(&mut params[s.w..s.w + w * w], w, &mut rng);
            let r = s.w + w * w + w;
            let normal = Normal::new(0.0, 1.0 / (w as f64 * (s.d_m as f64).sqrt())).unwrap();
            for p in &mut params[r..r + s.d_m * w * w] {
                *p = normal.sample(&mut rng);
            }
            if s.d_t > 0 {
                let rt = r + s.d_m * w * w;
                let normal = Normal::new(0.0, 1.0 / (w as f64 * (s.d_t as f64).sqrt())).unwrap();
                for (i, p) in params[rt..rt + s.d_t * w * w].iter_mut().enumerate() {
                    let (l, j) = ((i / w) % w, i % w);
                    *p = normal.sample(&mut rng) + if l == j { 1.0 } else { 0.0 };
                }
            }
        }
        for s in &self.layout.q {
            uniform(&mut params[s.w..s.b()], s.d_in, &mut rng);
        }
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn bases(&self) -> &[Arc<SpectralBasis>] {
        &self.bases
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.layout.total {
            return Err(NormError::ShapeMismatch(format!(
                "model has {} parameters, got {}",
                self.layout.total,
                params.len()
            )));
        }
        self.params = params;
        Ok(())
    }

    pub fn input_normalizer(&self) -> Option<&Normalizer> {
        self.input_norm.as_ref()
    }

    pub fn output_normalizer(&self) -> Option<&Normalizer> {
        self.output_norm.as_ref()
    }

    /// Fixed affine maps applied to raw inputs and to the network output.
    pub fn set_normalizers(&mut self, input: Option<Normalizer>, output: Option<Normalizer>) -> Result<()> {
        for (n, d, what) in [(&input, self.d_a(), "input"), (&output, self.d_u(), "output")] {
            if let Some(n) = n {
                if n.channels() != d {
                    return Err(NormError::ShapeMismatch(format!(
                        "{what} normalizer has {} channels, model has {d}",
                        n.channels()
                    )));
                }
            }
        }
        self.input_norm = input.filter(|n| !n.is_identity());
        self.output_norm = output.filter(|n| !n.is_identity());
        Ok(())
    }

    pub fn d_a(&self) -> usize {
        self.arch.d_a()
    }

    pub fn d_u(&self) -> usize {
        self.arch.d_u()
    }

    /// Samples per forward/backward pass such that one hidden buffer holds
    /// about [`MICRO_BATCH_VALUES`] numbers.
    pub fn micro_batch(&self) -> usize {
        let nodes = self
            .arch
            .layers
            .iter()
            .map(|l| match l.kind {
                LayerKind::Spectral { basis_in, basis_out } => self.bases[basis_in].n_x().max(self.bases[basis_out].n_x()),
                LayerKind::TimeToSpace { time, space } | LayerKind::SpaceTime { space, time } => {
                    self.bases[time].n_x() * self.bases[space].n_x()
                }
            })
            .fold(self.input_nodes().max(self.output_nodes()), usize::max);
        let a = &self.arch;
        let width = a.p_dims.iter().chain(&a.q_dims).fold(a.width, |m, &d| m.max(d));
        (MICRO_BATCH_VALUES / (nodes * width)).max(1)
    }

    pub fn input_nodes(&self) -> usize {
        layer_domains(self.arch.layers[0].kind, &self.bases).0 .0
    }

    pub fn output_nodes(&self) -> usize {
        layer_domains(self.arch.layers.last().unwrap().kind, &self.bases).1 .0
    }

    pub fn input_domain_id(&self) -> DomainId {
        layer_domains(self.arch.layers[0].kind, &self.bases).0 .1
    }

    pub fn output_domain_id(&self) -> DomainId {
        layer_domains(self.arch.layers.last().unwrap().kind, &self.bases).1 .1
    }

    /// Named parameter ranges in declaration order.
    pub fn param_groups(&self) -> Vec<(String, Range<usize>)> {
        let w = self.arch.width;
        let mut out = Vec::new();
        for (i, s) in self.layout.p.iter().enumerate() {
            out.push((format!("p{i}.weight"), s.w..s.b()));
            out.push((format!("p{i}.bias"), s.b()..s.end()));
        }
        for (i, s) in self.layout.layers.iter().enumerate() {
            let b = s.w + w * w;
            let r = b + w;
            let rt = r + s.d_m * w * w;
            out.push((format!("layer{i}.weight"), s.w..b));
            out.push((format!("layer{i}.bias"), b..r));
            out.push((format!("layer{i}.modes"), r..rt));
            if s.d_t > 0 {
                out.push((format!("layer{i}.time_modes"), rt..rt + s.d_t * w * w));
            }
        }
        for (i, s) in self.layout.q.iter().enumerate() {
            out.push((format!("q{i}.weight"), s.w..s.b()));
            out.push((format!("q{i}.bias"), s.b()..s.end()));
        }
        out
    }

    /// Same parameters bound to different bases with identical mode counts,
    /// e.g. the basis of a refined mesh.
    pub fn rebind(&self, bases: Vec<Arc<SpectralBasis>>) -> Result<NormModel> {
        let mut m = NormModel::new(self.arch.clone(), bases)?;
        m.params = self.params.clone();
        m.input_norm = self.input_norm.clone();
        m.output_norm = self.output_norm.clone();
        Ok(m)
    }

    pub fn forward(&self, a: &Field) -> Result<Field> {
        Ok(self.forward_batch(&[a])?.pop().unwrap())
    }

    pub fn forward_batch(&self, inputs: &[&Field]) -> Result<Vec<Field>> {
        let (out, _) = self.run(inputs, false)?;
        Ok(out)
    }

    /// Forward pass that also returns the intermediates needed by
    /// [`NormModel::backward_tape`].
    pub fn forward_with_tape(&self, inputs: &[&Field]) -> Result<(Vec<Field>, Tape)> {
        let (out, tape) = self.run(inputs, true)?;
        Ok((out, tape.unwrap()))
    }

    pub fn backward(&self, a: &Field, g: &Field) -> Result<Gradients> {
        let (_, tape) = self.forward_with_tape(&[a])?;
        let mut gr = self.backward_tape(&tape, &[g])?;
        Ok(Gradients { params: gr.params, input: gr.inputs.pop().unwrap() })
    }

    fn check_input(&self, f: &Field, idx: usize) -> Result<()> {
        let want = self.input_domain_id();
        if f.domain_id != want {
            return Err(NormError::DomainMismatch(format!(
                "input {idx} lives on {}, model expects {}",
                f.domain_id, want
            )));
        }
        if f.n_nodes() != self.input_nodes() || f.channels() != self.d_a() {
            return Err(NormError::DimensionMismatch(format!(
                "input {idx} is {}x{}, model expects {}x{}",
                f.n_nodes(),
                f.channels(),
                self.input_nodes(),
                self.d_a()
            )));
        }
        Ok(())
    }

    fn run(&self, inputs: &[&Field], keep: bool) -> Result<(Vec<Field>, Option<Tape>)> {
        if inputs.is_empty() {
            return Err(NormError::EmptyBatch);
        }
        for (i, f) in inputs.iter().enumerate() {
            self.check_input(f, i)?;
        }
        let mut x = Batch::from_fields(inputs)?;
        if let Some(n) = &self.input_norm {
            scale_batch(&mut x, n, false);
        }
        let mut tape = Tape { batch: inputs.len(), p: Vec::new(), layers: Vec::new(), q: Vec::new() };
        x = self.mlp_forward(&self.layout.p, &x, keep.then_some(&mut tape.p));
        for (i, desc) in self.arch.layers.iter().enumerate() {
            let (z, lt) = self.layer_forward(i, x, keep);
            let act = desc.activation;
            let h = match lt {
                Some(mut lt) => {
                    let slope = lt.slope_mut();
                    *slope = vec![0.0; z.data.len()];
                    let mut h = vec![0.0; z.data.len()];
                    for ((hv, sv), &zv) in h.iter_mut().zip(slope.iter_mut()).zip(&z.data) {
                        (*hv, *sv) = act.eval_with_derivative(zv);
                    }
                    tape.layers.push(lt);
                    h
                }
                None => act.apply(&z.data),
            };
            x = Batch::from_raw(z.n, z.width, z.batch, h);
        }
        x = self.mlp_forward(&self.layout.q, &x, keep.then_some(&mut tape.q));
        if let Some(n) = &self.output_norm {
            scale_batch(&mut x, n, true);
        }
        Ok((x.to_fields(self.output_domain_id()), keep.then_some(tape)))
    }

    /// Reverse pass for the batch recorded in `tape`. `grads[b]` is the
    /// derivative of the scalar loss with respect to output `b`.
    pub fn backward_tape(&self, tape: &Tape, grads: &[&Field]) -> Result<BatchGradients> {
        if grads.len() != tape.batch {
            return Err(NormError::ShapeMismatch(format!(
                "{} output gradients for a batch of {}",
                grads.len(),
                tape.batch
            )));
        }
        let want = self.output_domain_id();
        for (i, g) in grads.iter().enumerate() {
            if g.domain_id != want {
                return Err(NormError::DomainMismatch(format!("output gradient {i} is on the wrong domain")));
            }
            if g.n_nodes() != self.output_nodes() || g.channels() != self.d_u() {
                return Err(NormError::DimensionMismatch(format!(
                    "output gradient {i} is {}x{}, expected {}x{}",
                    g.n_nodes(),
                    g.channels(),
                    self.output_nodes(),
                    self.d_u()
                )));
            }
        }
        let mut gp = vec![0.0; self.layout.total];
        let mut dy = Batch::from_fields(grads)?;
        if let Some(n) = &self.output_norm {
            scale_grad(&mut dy, n, true);
        }
        dy = self.mlp_backward(&self.layout.q, &tape.q, dy, &mut gp);
        for i in (0..self.arch.layers.len()).rev() {
            dy = self.layer_backward(i, &tape.layers[i], dy, &mut gp);
        }
        dy = self.mlp_backward(&self.layout.p, &tape.p, dy, &mut gp);
        if let Some(n) = &self.input_norm {
            scale_grad(&mut dy, n, false);
        }
        Ok(BatchGradients { params: gp, inputs: dy.to_fields(self.input_domain_id()) })
    }

    /// Runs the pointwise stack one sample at a time so the wide hidden
    /// activations stay small.
    fn mlp_forward(&self, slots: &[DenseSlot], x: &Batch, mut traces: Option<&mut Vec<MlpTrace>>) -> Batch {
        let d_out = slots.last().map_or(x.width, |s| s.d_out);
        let mut out = Batch::zeros(x.n, d_out, x.batch);
        let (len, len_in) = (x.n * d_out, x.n * x.width);
        for b in 0..x.batch {
            let sample = &x.data[b * len_in..(b + 1) * len_in];
            let y = match traces.as_deref_mut() {
                Some(t) => {
                    let mut trace = Vec::with_capacity(slots.len());
                    let y = self.mlp_sample(slots, sample, x.n, Some(&mut trace));
                    t.push(trace);
                    y
                }
                None => self.mlp_sample(slots, sample, x.n, None),
            };
            out.data[b * len..(b + 1) * len].copy_from_slice(&y);
        }
        out
    }

    /// Forward pass of one column-major `n × d_in` sample. `trace` collects
    /// the input of every slot and the activation slope at its output.
    fn mlp_sample(
        &self,
        slots: &[DenseSlot],
        x: &[f64],
        n: usize,
        mut trace: Option<&mut Vec<(Vec<f64>, Vec<f64>)>>,
    ) -> Vec<f64> {
        let act = self.arch.pointwise_activation;
        let mut cur = x.to_vec();
        for (i, s) in slots.iter().enumerate() {
            let p = &self.params;
            let mut z = vec![0.0; n * s.d_out];
            gemm(col_major_mut(&mut z, n, s.d_out), col_major(&cur, n, s.d_in), row_major(&p[s.w..s.b()], s.d_in, s.d_out), false);
            for (col, beta) in z.chunks_exact_mut(n).zip(&p[s.b()..s.end()]) {
                if *beta != 0.0 {
                    col.iter_mut().for_each(|v| *v += beta);
                }
            }
            if i + 1 == slots.len() {
                if let Some(t) = trace.as_deref_mut() {
                    t.push((cur, Vec::new()));
                }
                return z;
            }
            match trace.as_deref_mut() {
                Some(t) => {
                    let mut slope = z;
                    let mut h = vec![0.0; slope.len()];
                    for (hv, sv) in h.iter_mut().zip(slope.iter_mut()) {
                        (*hv, *sv) = act.eval_with_derivative(*sv);
                    }
                    t.push((cur, slope));
                    cur = h;
                }
                None => cur = act.apply(&z),
            }
        }
        cur
    }

    fn mlp_backward(&self, slots: &[DenseSlot], traces: &[MlpTrace], dy: Batch, gp: &mut [f64]) -> Batch {
        let n = dy.n;
        let d_in = slots.first().map_or(dy.width, |s| s.d_in);
        let mut dx = Batch::zeros(n, d_in, dy.batch);
        let len = n * d_in;
        for (b, trace) in traces.iter().enumerate() {
            let mut g = dy.data[b * n * dy.width..(b + 1) * n * dy.width].to_vec();
            for (i, s) in slots.iter().enumerate().rev() {
                let (inp, slope) = &trace[i];
                if i + 1 != slots.len() {
                    g.iter_mut().zip(slope).for_each(|(a, b)| *a *= b);
                }
                let (gw, gb) = gp[s.w..s.end()].split_at_mut(s.d_in * s.d_out);
                let gm = col_major(&g, n, s.d_out);
                gemm(row_major_mut(gw, s.d_in, s.d_out), col_major(inp, n, s.d_in).transpose(), gm, true);
                for (acc, col) in gb.iter_mut().zip(g.chunks_exact(n)) {
                    *acc += col.iter().sum::<f64>();
                }
                let mut gx = vec![0.0; n * s.d_in];
                let wt = row_major(&self.params[s.w..s.b()], s.d_in, s.d_out).transpose();
                gemm(col_major_mut(&mut gx, n, s.d_in), gm, wt, false);
                g = gx;
            }
            dx.data[b * len..(b + 1) * len].copy_from_slice(&g);
        }
        dx
    }

    /// Parameter slices `(W, b, R, R_time)` of layer `i`.
    fn layer_params(&self, i: usize) -> (&[f64], &[f64], &[f64], &[f64]) {
        let s = self.layout.layers[i];
        let w = self.arch.width;
        let p = &self.params[s.w..];
        let (pw, rest) = p.split_at(w * w);
        let (pb, rest) = rest.split_at(w);
        let (pr, rest) = rest.split_at(s.d_m * w * w);
        (pw, pb, pr, &rest[..s.d_t * w * w])
    }

    /// Returns the pre-activation of layer `i`.
    fn layer_forward(&self, i: usize, v: Batch, keep: bool) -> (Batch, Option<LayerTape>) {
        let w = self.arch.width;
        let nb = v.batch;
        let (pw, pb, pr, prt) = self.layer_params(i);
        match self.arch.layers[i].kind {
            LayerKind::Spectral { basis_in, basis_out } => {
                let (bi, bo) = (&self.bases[basis_in], &self.bases[basis_out]);
                let coeff = left_mul(bi.pinv(), &v.data);
                let mixed = mix_forward(MixShape::plain(bi.d_m(), w, nb), pr, &coeff, false);
                let u = Batch::from_raw(bo.n_x(), w, nb, left_mul(bo.modes(), &mixed));
                if basis_in == basis_out {
                    let mut z = affine_forward(&v, pw, pb, w);
                    z.data.iter_mut().zip(&u.data).for_each(|(a, b)| *a += b);
                    let t = keep.then(|| LayerTape::Spectral { v, coeff, u: None, slope: Vec::new() });
                    (z, t)
                } else {
                    let z = affine_forward(&u, pw, pb, w);
                    let t = keep.then(|| LayerTape::Spectral { v, coeff, u: Some(u), slope: Vec::new() });
                    (z, t)
                }
            }
            LayerKind::TimeToSpace { time, space } => {
                let (bt, by) = (&self.bases[time], &self.bases[space]);
                let coeff = left_mul(bt.pinv(), &v.data);
                let shape = MixShape { a: bt.d_m(), k: by.d_m(), c: 1, v: w, b: nb };
                let m = mix_forward(shape, pr, &coeff, true);
                let u = Batch::from_raw(by.n_x() * bt.n_x(), w, nb, decode_space_time(bt, by, &m));
                let z = affine_forward(&u, pw, pb, w);
                let t = keep.then(|| LayerTape::TimeToSpace { coeff, u, slope: Vec::new() });
                (z, t)
            }
            LayerKind::SpaceTime { space, time } => {
                let (bt, by) = (&self.bases[time], &self.bases[space]);
                let e = encode_space_time(bt, by, &v.data);
                let s_shape = MixShape { a: bt.d_m(), k: by.d_m(), c: 1, v: w, b: nb };
                let t_shape = MixShape { a: 1, k: bt.d_m(), c: by.d_m(), v: w, b: nb };
                let e1 = mix_forward(s_shape, pr, &e, false);
                let e2 = mix_forward(t_shape, prt, &e1, false);
                let u = decode_space_time(bt, by, &e2);
                let mut z = affine_forward(&v, pw, pb, w);
                z.data.iter_mut().zip(&u).for_each(|(a, b)| *a += b);
                let t = keep.then(|| LayerTape::SpaceTime { v, e, e1, slope: Vec::new() });
                (z, t)
            }
        }
    }

    fn layer_backward(&self, i: usize, tape: &LayerTape, mut dz: Batch, gp: &mut [f64]) -> Batch {
        let w = self.arch.width;
        let nb = dz.batch;
        let s = self.layout.layers[i];
        let (pw, _, pr, prt) = self.layer_params(i);
        let g = &mut gp[s.w..s.w + w * w + w + (s.d_m + s.d_t) * w * w];
        let (gw, rest) = g.split_at_mut(w * w);
        let (gb, rest) = rest.split_at_mut(w);
        let (gr, grt) = rest.split_at_mut(s.d_m * w * w);
        match (self.arch.layers[i].kind, tape) {
            (LayerKind::Spectral { basis_in, basis_out }, LayerTape::Spectral { v, coeff, u, slope }) => {
                dz.data.iter_mut().zip(slope).for_each(|(g, d)| *g *= d);
                let (bi, bo) = (&self.bases[basis_in], &self.bases[basis_out]);
                let (mut dv, dmixed) = match u {
                    None => {
                        affine_param_grads(v, &dz, gw, gb);
                        let dv = affine_input_grad(&dz, pw, w);
                        (dv, left_mul(bo.modes().transpose(), &dz.data))
                    }
                    Some(u) => {
                        affine_param_grads(u, &dz, gw, gb);
                        let du = affine_input_grad(&dz, pw, w);
                        (Batch::zeros(v.n, w, nb), left_mul(bo.modes().transpose(), &du.data))
                    }
                };
                let dcoeff = mix_backward(MixShape::plain(bi.d_m(), w, nb), pr, coeff, &dmixed, gr, false);
                left_mul_acc(bi.pinv().transpose(), &dcoeff, &mut dv.data);
                dv
            }
            (LayerKind::TimeToSpace { time, space }, LayerTape::TimeToSpace { coeff, u, slope }) => {
                dz.data.iter_mut().zip(slope).for_each(|(g, d)| *g *= d);
                let (bt, by) = (&self.bases[time], &self.bases[space]);
                affine_param_grads(u, &dz, gw, gb);
                let du = affine_input_grad(&dz, pw, w);
                let dm = decode_space_time_adjoint(bt, by, &du.data);
                let shape = MixShape { a: bt.d_m(), k: by.d_m(), c: 1, v: w, b: nb };
                let dcoeff = mix_backward(shape, pr, coeff, &dm, gr, true);
                Batch::from_raw(bt.n_x(), w, nb, left_mul(bt.pinv().transpose(), &dcoeff))
            }
            (LayerKind::SpaceTime { space, time }, LayerTape::SpaceTime { v, e, e1, slope }) => {
                dz.data.iter_mut().zip(slope).for_each(|(g, d)| *g *= d);
                let (bt, by) = (&self.bases[time], &self.bases[space]);
                affine_param_grads(v, &dz, gw, gb);
                let mut dv = affine_input_grad(&dz, pw, w);
                let s_shape = MixShape { a: bt.d_m(), k: by.d_m(), c: 1, v: w, b: nb };
                let t_shape = MixShape { a: 1, k: bt.d_m(), c: by.d_m(), v: w, b: nb };
                let de2 = decode_space_time_adjoint(bt, by, &dz.data);
                let de1 = mix_backward(t_shape, prt, e1, &de2, grt, false);
                let de = mix_backward(s_shape, pr, e, &de1, gr, false);
                encode_space_time_adjoint_acc(bt, by, &de, &mut dv.data);
                dv
            }
            _ => unreachable!("tape does not match layer kind"),
        }
    }
}

/// Space-time field `(y, t, col)` to coefficients `(s, k, col)`.
fn encode_space_time(bt: &SpectralBasis, by: &SpectralBasis, v: &[f64]) -> Vec<f64> {
    let cs = left_mul(by.pinv(), v);
    left_mul(bt.pinv(), &swap01(&cs, by.d_m(), bt.n_x()))
}

fn encode_space_time_adjoint_acc(bt: &SpectralBasis, by: &SpectralBasis, de: &[f64], acc: &mut [f64]) {
    let g = left_mul(bt.pinv().transpose(), de);
    left_mul_acc(by.pinv().transpose(), &swap01(&g, bt.n_x(), by.d_m()), acc);
}

/// Coefficients `(s, k, col)` to the space-time field `(y, t, col)`, i.e.
/// row `t * n_y + y`.
fn decode_space_time(bt: &SpectralBasis, by: &SpectralBasis, m: &[f64]) -> Vec<f64> {
    let t1 = left_mul(bt.modes(), m);
    left_mul(by.modes(), &swap01(&t1, bt.n_x(), by.d_m()))
}

fn decode_space_time_adjoint(bt: &SpectralBasis, by: &SpectralBasis, du: &[f64]) -> Vec<f64> {
    let g1 = left_mul(by.modes().transpose(), du);
    left_mul(bt.modes().transpose(), &swap01(&g1, by.d_m(), bt.n_x()))
}

/// Applies (or with `invert`, undoes) a per-channel normalisation in place.
fn scale_batch(x: &mut Batch, n: &Normalizer, invert: bool) {
    let (rows, w) = (x.n, x.width);
    for (col, chunk) in x.data.chunks_exact_mut(rows).enumerate() {
        let c = col % w;
        let (m, s) = (n.mean[c], n.std[c]);
        for v in chunk {
            *v = if invert { *v * s + m } else { (*v - m) / s };
        }
    }
}

/// Chain rule through [`scale_batch`]; both directions multiply or divide
/// by the channel scale only.
fn scale_grad(g: &mut Batch, n: &Normalizer, output: bool) {
    let (rows, w) = (g.n, g.width);
    for (col, chunk) in g.data.chunks_exact_mut(rows).enumerate() {
        let s = n.std[col % w];
        for v in chunk {
            *v = if output { *v * s } else { *v / s };
        }
    }
}
