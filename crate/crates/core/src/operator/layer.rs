use std::sync::Arc;

use super::kernels::{affine_forward, left_mul, mix_forward, Activation, Batch, MixShape};
use crate::field::Field;
use crate::spectral::SpectralBasis;
use crate::{NormError, Result};

/// One hidden layer on its own: `W` (`d_v × d_v`, row-major, acting as
/// `V W`), per-channel bias `b`, and the mode-mixing tensor `R`
/// (`d_m × d_v × d_v`, `R[k][l][j]` at `(k d_v + l) d_v + j`).
#[derive(Debug, Clone)]
pub struct LLayerParams {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub r: Vec<f64>,
    pub basis_in: Arc<SpectralBasis>,
    pub basis_out: Arc<SpectralBasis>,
    pub activation: Activation,
}

impl LLayerParams {
    /// Zero weights for `width` channels on the given bases.
    pub fn zeros(basis_in: Arc<SpectralBasis>, basis_out: Arc<SpectralBasis>, width: usize) -> Result<Self> {
        if basis_in.d_m() != basis_out.d_m() {
            return Err(NormError::InvalidSpec(format!(
                "input and output bases need equal mode counts, got {} and {}",
                basis_in.d_m(),
                basis_out.d_m()
            )));
        }
        let d_m = basis_in.d_m();
        Ok(LLayerParams {
            w: vec![0.0; width * width],
            b: vec![0.0; width],
            r: vec![0.0; d_m * width * width],
            basis_in,
            basis_out,
            activation: Activation::Identity,
        })
    }

    pub fn width(&self) -> usize {
        self.b.len()
    }

    pub fn is_cross(&self) -> bool {
        !Arc::ptr_eq(&self.basis_in, &self.basis_out) && *self.basis_in != *self.basis_out
    }

    fn check(&self, v: &Field) -> Result<()> {
        let w = self.width();
        let d_m = self.basis_in.d_m();
        if self.w.len() != w * w || self.r.len() != d_m * w * w || self.basis_out.d_m() != d_m {
            return Err(NormError::ShapeMismatch("layer parameters have inconsistent shapes".into()));
        }
        if v.n_nodes() != self.basis_in.n_x() || v.channels() != w {
            return Err(NormError::DimensionMismatch(format!(
                "layer expects {}x{w}, field is {}x{}",
                self.basis_in.n_x(),
                v.n_nodes(),
                v.channels()
            )));
        }
        Ok(())
    }

    /// `Φ_out · mix(Φ_in† V)` with `mix_{k,l} = Σ_j R[k][l][j] (Φ_in† V)_{k,j}`.
    pub fn spectral_block(&self, v: &Field) -> Result<Field> {
        self.check(v)?;
        let x = Batch::from_fields(&[v])?;
        let coeff = left_mul(self.basis_in.pinv(), &x.data);
        let mixed = mix_forward(MixShape::plain(self.basis_in.d_m(), self.width(), 1), &self.r, &coeff, false);
        let u = Batch::from_raw(self.basis_out.n_x(), self.width(), 1, left_mul(self.basis_out.modes(), &mixed));
        Ok(u.to_fields(self.basis_out.source_id()).pop().unwrap())
    }

    /// Same-manifold: `σ(VW + 1bᵀ + block(V))`. Cross-manifold:
    /// `σ(block(V) W + 1bᵀ)` on the output domain.
    pub fn forward(&self, v: &Field) -> Result<Field> {
        let block = Batch::from_fields(&[&self.spectral_block(v)?])?;
        let w = self.width();
        let z = if self.is_cross() {
            affine_forward(&block, &self.w, &self.b, w)
        } else {
            let mut z = affine_forward(&Batch::from_fields(&[v])?, &self.w, &self.b, w);
            z.data.iter_mut().zip(&block.data).for_each(|(a, b)| *a += b);
            z
        };
        let out = Batch::from_raw(z.n, z.width, 1, self.activation.apply(&z.data));
        Ok(out.to_fields(self.basis_out.source_id()).pop().unwrap())
    }
}

/// Free-function form of [`LLayerParams::spectral_block`].
pub fn spectral_block(layer: &LLayerParams, v: &Field) -> Result<Field> {
    layer.spectral_block(v)
}

/// Free-function form of [`LLayerParams::forward`].
pub fn l_layer_forward(layer: &LLayerParams, v: &Field) -> Result<Field> {
    layer.forward(v)
}
