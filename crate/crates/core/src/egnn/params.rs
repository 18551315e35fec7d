use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::action::FEATURE_DIM;
use crate::error::{Error, Result};

/// Fully connected layer, weights stored row-major as `n_out x n_in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Dense {
            n_in,
            n_out,
            w: vec![0.0; n_in * n_out],
            b: vec![0.0; n_out],
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let a = (6.0 / (n_in + n_out) as f64).sqrt();
        let mut d = Dense::zeros(n_in, n_out);
        for w in &mut d.w {
            *w = rng.gen_range(-a..a);
        }
        d
    }

    fn randomize_bias<R: Rng + ?Sized>(&mut self, scale: f64, rng: &mut R) {
        for b in &mut self.b {
            *b = rng.gen_range(-scale..scale);
        }
    }

    fn shape_ok(&self) -> bool {
        self.w.len() == self.n_in * self.n_out && self.b.len() == self.n_out
    }
}

/// One round of message passing: edge network, coordinate network and node
/// network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EgnnLayer {
    /// `[h_i, h_j, |x_i - x_j|^2] -> hidden`
    pub edge_in: Dense,
    pub edge_out: Dense,
    pub coord_hidden: Dense,
    /// `hidden -> 1`, linear
    pub coord_out: Dense,
    /// `[h_i, sum_j m_ij] -> hidden`
    pub node_hidden: Dense,
    pub node_out: Dense,
}

impl EgnnLayer {
    fn zeros(h: usize) -> Self {
        EgnnLayer {
            edge_in: Dense::zeros(2 * h + 1, h),
            edge_out: Dense::zeros(h, h),
            coord_hidden: Dense::zeros(h, h),
            coord_out: Dense::zeros(h, 1),
            node_hidden: Dense::zeros(2 * h, h),
            node_out: Dense::zeros(h, h),
        }
    }

    fn dense(&self) -> [&Dense; 6] {
        [
            &self.edge_in,
            &self.edge_out,
            &self.coord_hidden,
            &self.coord_out,
            &self.node_hidden,
            &self.node_out,
        ]
    }

    fn dense_mut(&mut self) -> [&mut Dense; 6] {
        [
            &mut self.edge_in,
            &mut self.edge_out,
            &mut self.coord_hidden,
            &mut self.coord_out,
            &mut self.node_hidden,
            &mut self.node_out,
        ]
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EgnnConfig {
    pub n_layers: usize,
    pub hidden_dim: usize,
    /// Lengths entering the network as invariant scalars (canonical
    /// coordinates, push length, squared distances) are divided by this.
    pub length_scale: f64,
}

impl Default for EgnnConfig {
    fn default() -> Self {
        EgnnConfig {
            n_layers: 4,
            hidden_dim: 64,
            length_scale: 0.1,
        }
    }
}

impl EgnnConfig {
    pub fn new(n_layers: usize, hidden_dim: usize) -> Self {
        EgnnConfig {
            n_layers,
            hidden_dim,
            ..EgnnConfig::default()
        }
    }
}

/// Network weights plus architecture. Gradients use the same layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EgnnParams {
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub length_scale: f64,
    /// Scale `C` on the aggregated coordinate update.
    pub coord_scale: f64,
    pub embed: Dense,
    pub layers: Vec<EgnnLayer>,
}

/// `dL/dθ`, shaped exactly like the parameters it belongs to.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle(pub EgnnParams);

impl EgnnParams {
    pub fn zeros(cfg: EgnnConfig, coord_scale: f64) -> Self {
        let h = cfg.hidden_dim;
        EgnnParams {
            n_layers: cfg.n_layers,
            hidden_dim: h,
            length_scale: cfg.length_scale,
            coord_scale,
            embed: Dense::zeros(FEATURE_DIM, h),
            layers: (0..cfg.n_layers).map(|_| EgnnLayer::zeros(h)).collect(),
        }
    }

    /// Training initialisation: Glorot weights everywhere except the final
    /// coordinate layer, which starts at zero so the untrained model
    /// predicts no motion.
    pub fn init<R: Rng + ?Sized>(cfg: EgnnConfig, coord_scale: f64, rng: &mut R) -> Result<Self> {
        if cfg.n_layers == 0 || cfg.hidden_dim == 0 {
            return Err(Error::InvalidInput("network needs at least one layer and hidden unit".into()));
        }
        if !(cfg.length_scale.is_finite() && cfg.length_scale > 0.0) {
            return Err(Error::InvalidInput("length scale must be positive".into()));
        }
        if !(coord_scale.is_finite() && coord_scale > 0.0) {
            return Err(Error::InvalidInput("coordinate scale must be positive".into()));
        }
        let h = cfg.hidden_dim;
        let mut p = EgnnParams::zeros(cfg, coord_scale);
        p.embed = Dense::glorot(FEATURE_DIM, h, rng);
        for layer in &mut p.layers {
            layer.edge_in = Dense::glorot(2 * h + 1, h, rng);
            layer.edge_out = Dense::glorot(h, h, rng);
            layer.coord_hidden = Dense::glorot(h, h, rng);
            layer.coord_out = Dense::zeros(h, 1);
            layer.node_hidden = Dense::glorot(2 * h, h, rng);
            layer.node_out = Dense::glorot(h, h, rng);
        }
        Ok(p)
    }

    /// Every weight and bias random, including the coordinate head. Used by
    /// the property suites.
    pub fn random<R: Rng + ?Sized>(cfg: EgnnConfig, coord_scale: f64, rng: &mut R) -> Result<Self> {
        let mut p = Self::init(cfg, coord_scale, rng)?;
        p.embed.randomize_bias(0.1, rng);
        for layer in &mut p.layers {
            layer.coord_out = Dense::glorot(cfg.hidden_dim, 1, rng);
            for d in layer.dense_mut() {
                d.randomize_bias(0.1, rng);
            }
        }
        Ok(p)
    }

    pub fn config(&self) -> EgnnConfig {
        EgnnConfig {
            n_layers: self.n_layers,
            hidden_dim: self.hidden_dim,
            length_scale: self.length_scale,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config(), self.coord_scale)
    }

    /// All weight and bias vectors in a fixed order.
    pub fn tensors(&self) -> Vec<&Vec<f64>> {
        let mut out = vec![&self.embed.w, &self.embed.b];
        for l in &self.layers {
            for d in l.dense() {
                out.push(&d.w);
                out.push(&d.b);
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = vec![&mut self.embed.w, &mut self.embed.b];
        for l in &mut self.layers {
            for d in l.dense_mut() {
                out.push(&mut d.w);
                out.push(&mut d.b);
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors().into_iter().flat_map(|t| t.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::DimensionMismatch {
                expected: self.num_params(),
                got: values.len(),
            });
        }
        let mut k = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&values[k..k + n]);
            k += n;
        }
        Ok(())
    }

    /// Shape and finiteness checks, used after deserialisation.
    pub fn validate(&self) -> Result<()> {
        let h = self.hidden_dim;
        if self.n_layers == 0 || self.layers.len() != self.n_layers {
            return Err(Error::Format("layer count does not match header".into()));
        }
        if !(self.length_scale > 0.0 && self.coord_scale.is_finite()) {
            return Err(Error::Format("scales must be positive and finite".into()));
        }
        let mut ok = self.embed.shape_ok() && self.embed.n_in == FEATURE_DIM && self.embed.n_out == h;
        for l in &self.layers {
            ok &= l.dense().iter().all(|d| d.shape_ok());
            ok &= l.edge_in.n_in == 2 * h + 1 && l.edge_in.n_out == h;
            ok &= l.edge_out.n_in == h && l.edge_out.n_out == h;
            ok &= l.coord_hidden.n_in == h && l.coord_hidden.n_out == h;
            ok &= l.coord_out.n_in == h && l.coord_out.n_out == 1;
            ok &= l.node_hidden.n_in == 2 * h && l.node_hidden.n_out == h;
            ok &= l.node_out.n_in == h && l.node_out.n_out == h;
        }
        if !ok {
            return Err(Error::Format("weight shapes do not match the architecture".into()));
        }
        if self.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numeric("non-finite weight".into()));
        }
        Ok(())
    }
}

impl GradientBundle {
    pub fn zeros_like(p: &EgnnParams) -> Self {
        GradientBundle(p.zeros_like())
    }

    pub fn flat(&self) -> Vec<f64> {
        self.0.flat()
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.0.tensors_mut() {
            for v in t.iter_mut() {
                *v *= s;
            }
        }
    }

    pub fn add_assign(&mut self, o: &GradientBundle) {
        for (a, b) in self.0.tensors_mut().into_iter().zip(o.0.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }
}
