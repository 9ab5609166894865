//! Two-branch metaphor classifier.
//!
//! The SPV branch compares the in-context target vector with the sentence
//! vector; the MIP branch compares the target's contextual meaning with its
//! literal meaning. Each branch is `dropout(act(W [a ; b] + b))` and the head
//! maps the fused branch features to two logits (class 1 = metaphor).
//!
//! With `use_prompt_mip` off, the MIP branch is fed the in-sentence target
//! vector instead of the prompt-predicted meaning vector. Parameter shapes do
//! not change.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{EncoderOutputs, DEFAULT_HIDDEN_DIM};

pub const CHECKPOINT_FORMAT: &str = "metaphor-detector";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// Tanh approximation of GELU.
    #[default]
    Gelu,
    Tanh,
    Identity,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => 0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh()),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
            }
            Activation::Tanh => 1.0 - x.tanh().powi(2),
            Activation::Identity => 1.0,
        }
    }
}

/// How the two branch features reach the head.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    #[default]
    Concat,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    /// Width of every layer; must equal the encoder width.
    pub hidden_dim: usize,
    pub use_prompt_mip: bool,
    pub dropout_rate: f64,
    pub activation: Activation,
    pub fusion: Fusion,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            hidden_dim: DEFAULT_HIDDEN_DIM,
            use_prompt_mip: true,
            dropout_rate: 0.1,
            activation: Activation::Gelu,
            fusion: Fusion::Concat,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), DetectorError> {
        if self.hidden_dim == 0 {
            return Err(DetectorError::Config("hidden_dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(DetectorError::Config(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn check_encoder_dim(&self, encoder_dim: usize) -> Result<(), DetectorError> {
        if encoder_dim != self.hidden_dim {
            return Err(DetectorError::Config(format!(
                "hidden_dim {} does not match encoder width {encoder_dim}",
                self.hidden_dim
            )));
        }
        Ok(())
    }

    fn head_width(&self) -> usize {
        match self.fusion {
            Fusion::Concat => 2 * self.hidden_dim,
            Fusion::Sum => self.hidden_dim,
        }
    }
}

/// Trainable tensors. Weight matrices are `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub spv_w: Array2<f64>,
    pub spv_b: Array1<f64>,
    pub mip_w: Array2<f64>,
    pub mip_b: Array1<f64>,
    pub head_w: Array2<f64>,
    pub head_b: Array1<f64>,
}

pub const PARAM_NAMES: [&str; 6] = [
    "spv.weight",
    "spv.bias",
    "mip.weight",
    "mip.bias",
    "head.weight",
    "head.bias",
];

impl Params {
    pub fn zeros(config: &DetectorConfig) -> Self {
        let h = config.hidden_dim;
        Params {
            spv_w: Array2::zeros((h, 2 * h)),
            spv_b: Array1::zeros(h),
            mip_w: Array2::zeros((h, 2 * h)),
            mip_b: Array1::zeros(h),
            head_w: Array2::zeros((2, config.head_width())),
            head_b: Array1::zeros(2),
        }
    }

    /// Uniform Xavier initialisation with zero biases.
    pub fn init(config: &DetectorConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(config);
        for w in [&mut p.spv_w, &mut p.mip_w, &mut p.head_w] {
            let (o, i) = w.dim();
            let bound = (6.0 / (o + i) as f64).sqrt();
            w.mapv_inplace(|_| rng.random_range(-bound..bound));
        }
        p
    }

    pub fn tensors(&self) -> [(&'static str, &[f64], Vec<usize>); 6] {
        [
            (
                PARAM_NAMES[0],
                self.spv_w.as_slice().expect("standard layout"),
                self.spv_w.shape().to_vec(),
            ),
            (
                PARAM_NAMES[1],
                self.spv_b.as_slice().expect("standard layout"),
                self.spv_b.shape().to_vec(),
            ),
            (
                PARAM_NAMES[2],
                self.mip_w.as_slice().expect("standard layout"),
                self.mip_w.shape().to_vec(),
            ),
            (
                PARAM_NAMES[3],
                self.mip_b.as_slice().expect("standard layout"),
                self.mip_b.shape().to_vec(),
            ),
            (
                PARAM_NAMES[4],
                self.head_w.as_slice().expect("standard layout"),
                self.head_w.shape().to_vec(),
            ),
            (
                PARAM_NAMES[5],
                self.head_b.as_slice().expect("standard layout"),
                self.head_b.shape().to_vec(),
            ),
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.spv_w.as_slice_mut().expect("standard layout"),
            self.spv_b.as_slice_mut().expect("standard layout"),
            self.mip_w.as_slice_mut().expect("standard layout"),
            self.mip_b.as_slice_mut().expect("standard layout"),
            self.head_w.as_slice_mut().expect("standard layout"),
            self.head_b.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.tensors().iter().map(|(_, _, s)| s.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|(_, d, _)| d.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Batched detector inputs, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchInputs {
    pub target: Array2<f64>,
    pub sentence: Array2<f64>,
    pub context_meaning: Array2<f64>,
    pub literal: Array2<f64>,
}

impl BatchInputs {
    pub fn from_outputs(outputs: &[&EncoderOutputs]) -> Self {
        let stack = |f: &dyn Fn(&EncoderOutputs) -> &Vec<f64>| {
            let d = outputs.first().map(|o| f(o).len()).unwrap_or(0);
            let flat: Vec<f64> = outputs.iter().flat_map(|o| f(o).iter().copied()).collect();
            Array2::from_shape_vec((outputs.len(), d), flat).expect("rows share a width")
        };
        BatchInputs {
            target: stack(&|o| &o.target_vector),
            sentence: stack(&|o| &o.sentence_vector),
            context_meaning: stack(&|o| &o.context_meaning_vector),
            literal: stack(&|o| &o.literal_vector),
        }
    }

    pub fn len(&self) -> usize {
        self.target.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Which vector fed the first half of the MIP branch input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MipSource {
    PromptPrediction,
    InContextTarget,
}

/// Records branch inputs seen by forward passes.
#[derive(Debug, Clone, Default)]
pub struct ActivationProbe {
    pub mip_source: Vec<MipSource>,
    pub spv_inputs: Vec<Array2<f64>>,
    pub mip_inputs: Vec<Array2<f64>>,
    pub logits: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train,
}

/// Per-sample outputs in eval mode.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorOutputs {
    pub spv_feature: Array1<f64>,
    pub mip_feature: Array1<f64>,
    pub logits: [f64; 2],
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    spv_in: Array2<f64>,
    mip_in: Array2<f64>,
    spv_pre: Array2<f64>,
    mip_pre: Array2<f64>,
    spv_mask: Option<Array2<f64>>,
    mip_mask: Option<Array2<f64>>,
    fused: Array2<f64>,
    pub logits: Array2<f64>,
}

/// Dropout masks for a batch, already scaled by `1 / (1 - p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    pub spv: Array2<f64>,
    pub mip: Array2<f64>,
}

impl DropoutMasks {
    pub fn sample<R: Rng>(rng: &mut R, rows: usize, width: usize, rate: f64) -> Self {
        let keep = 1.0 - rate;
        let mut draw = || {
            Array2::from_shape_simple_fn((rows, width), || {
                if rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
        };
        DropoutMasks {
            spv: draw(),
            mip: draw(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    pub config: DetectorConfig,
    pub params: Params,
}

fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

fn affine(x: ArrayView2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    x.dot(&w.t()) + b
}

impl Detector {
    pub fn new(config: DetectorConfig, seed: u64) -> Result<Self, DetectorError> {
        config.validate()?;
        Ok(Detector {
            params: Params::init(&config, seed),
            config,
        })
    }

    pub fn with_params(config: DetectorConfig, params: Params) -> Result<Self, DetectorError> {
        config.validate()?;
        let expected = Params::zeros(&config).shapes();
        if params.shapes() != expected {
            return Err(DetectorError::Config(format!(
                "parameter shapes {:?} do not match config {:?}",
                params.shapes(),
                expected
            )));
        }
        Ok(Detector { config, params })
    }

    fn check_vec(&self, v: ArrayView1<f64>, what: &str) -> Result<(), DetectorError> {
        if v.len() != self.config.hidden_dim {
            return Err(DetectorError::Config(format!(
                "{what} has width {}, expected {}",
                v.len(),
                self.config.hidden_dim
            )));
        }
        Ok(())
    }

    fn branch(
        &self,
        w: &Array2<f64>,
        b: &Array1<f64>,
        a: ArrayView1<f64>,
        c: ArrayView1<f64>,
    ) -> Array1<f64> {
        let x = concatenate![Axis(0), a, c];
        (w.dot(&x) + b).mapv(|v| self.config.activation.apply(v))
    }

    /// SPV feature from the in-context target vector and the sentence vector.
    pub fn spv_branch(
        &self,
        target: ArrayView1<f64>,
        sentence: ArrayView1<f64>,
    ) -> Result<Array1<f64>, DetectorError> {
        self.check_vec(target, "target vector")?;
        self.check_vec(sentence, "sentence vector")?;
        Ok(self.branch(&self.params.spv_w, &self.params.spv_b, target, sentence))
    }

    /// MIP feature from the prompt-predicted meaning and the literal vector.
    pub fn mip_branch(
        &self,
        context_meaning: ArrayView1<f64>,
        literal: ArrayView1<f64>,
    ) -> Result<Array1<f64>, DetectorError> {
        self.check_vec(context_meaning, "context meaning vector")?;
        self.check_vec(literal, "literal vector")?;
        Ok(self.branch(
            &self.params.mip_w,
            &self.params.mip_b,
            context_meaning,
            literal,
        ))
    }

    /// MIP feature from the in-sentence target vector; only valid for the
    /// no-prompt variant.
    pub fn mip_branch_direct(
        &self,
        target_in_context: ArrayView1<f64>,
        literal: ArrayView1<f64>,
    ) -> Result<Array1<f64>, DetectorError> {
        if self.config.use_prompt_mip {
            return Err(DetectorError::Config(
                "direct MIP input requested while use_prompt_mip is on".into(),
            ));
        }
        self.check_vec(target_in_context, "target vector")?;
        self.check_vec(literal, "literal vector")?;
        Ok(self.branch(
            &self.params.mip_w,
            &self.params.mip_b,
            target_in_context,
            literal,
        ))
    }

    pub fn classify(
        &self,
        spv_feature: ArrayView1<f64>,
        mip_feature: ArrayView1<f64>,
    ) -> Result<[f64; 2], DetectorError> {
        self.check_vec(spv_feature, "SPV feature")?;
        self.check_vec(mip_feature, "MIP feature")?;
        let fused = match self.config.fusion {
            Fusion::Concat => concatenate![Axis(0), spv_feature, mip_feature],
            Fusion::Sum => &spv_feature + &mip_feature,
        };
        let z = self.params.head_w.dot(&fused) + &self.params.head_b;
        Ok([z[0], z[1]])
    }

    /// Eval-mode pass for one sample, routing the MIP input per config.
    pub fn forward_one(&self, out: &EncoderOutputs) -> Result<DetectorOutputs, DetectorError> {
        let v = |x: &Vec<f64>| Array1::from(x.clone());
        let (t, snt, c, l) = (
            v(&out.target_vector),
            v(&out.sentence_vector),
            v(&out.context_meaning_vector),
            v(&out.literal_vector),
        );
        let spv_feature = self.spv_branch(t.view(), snt.view())?;
        let mip_feature = if self.config.use_prompt_mip {
            self.mip_branch(c.view(), l.view())?
        } else {
            self.mip_branch_direct(t.view(), l.view())?
        };
        let logits = self.classify(spv_feature.view(), mip_feature.view())?;
        Ok(DetectorOutputs {
            spv_feature,
            mip_feature,
            logits,
        })
    }

    pub fn mip_source(&self) -> MipSource {
        if self.config.use_prompt_mip {
            MipSource::PromptPrediction
        } else {
            MipSource::InContextTarget
        }
    }

    /// Batched forward pass. Dropout is applied only when `masks` is given.
    pub fn forward(
        &self,
        inputs: &BatchInputs,
        masks: Option<&DropoutMasks>,
        probe: Option<&mut ActivationProbe>,
    ) -> Result<ForwardCache, DetectorError> {
        let h = self.config.hidden_dim;
        for (m, what) in [
            (&inputs.target, "target"),
            (&inputs.sentence, "sentence"),
            (&inputs.context_meaning, "context meaning"),
            (&inputs.literal, "literal"),
        ] {
            if m.ncols() != h || m.nrows() != inputs.len() {
                return Err(DetectorError::Config(format!(
                    "{what} inputs shaped {:?}, expected (_, {h})",
                    m.dim()
                )));
            }
        }
        let spv_in = concatenate![Axis(1), inputs.target, inputs.sentence];
        let mip_first = if self.config.use_prompt_mip {
            &inputs.context_meaning
        } else {
            &inputs.target
        };
        let mip_in = concatenate![Axis(1), *mip_first, inputs.literal];
        let spv_pre = affine(spv_in.view(), &self.params.spv_w, &self.params.spv_b);
        let mip_pre = affine(mip_in.view(), &self.params.mip_w, &self.params.mip_b);
        let act = self.config.activation;
        let mut spv_act = spv_pre.mapv(|v| act.apply(v));
        let mut mip_act = mip_pre.mapv(|v| act.apply(v));
        if let Some(m) = masks {
            spv_act *= &m.spv;
            mip_act *= &m.mip;
        }
        let fused = match self.config.fusion {
            Fusion::Concat => concatenate![Axis(1), spv_act, mip_act],
            Fusion::Sum => &spv_act + &mip_act,
        };
        let logits = affine(fused.view(), &self.params.head_w, &self.params.head_b);
        if let Some(p) = probe {
            p.mip_source.push(self.mip_source());
            p.spv_inputs.push(spv_in.clone());
            p.mip_inputs.push(mip_in.clone());
            p.logits.push(logits.clone());
        }
        Ok(ForwardCache {
            spv_in,
            mip_in,
            spv_pre,
            mip_pre,
            spv_mask: masks.map(|m| m.spv.clone()),
            mip_mask: masks.map(|m| m.mip.clone()),
            fused,
            logits,
        })
    }

    /// Gradients of a scalar loss given `d loss / d logits`.
    pub fn backward(&self, cache: &ForwardCache, dlogits: ArrayView2<f64>) -> Params {
        let h = self.config.hidden_dim;
        let act = self.config.activation;
        let head_w = standard(dlogits.t().dot(&cache.fused));
        let head_b = dlogits.sum_axis(Axis(0));
        let dfused = dlogits.dot(&self.params.head_w);
        let (mut d_spv, mut d_mip) = match self.config.fusion {
            Fusion::Concat => (
                dfused.slice(s![.., ..h]).to_owned(),
                dfused.slice(s![.., h..]).to_owned(),
            ),
            Fusion::Sum => (dfused.clone(), dfused),
        };
        if let Some(m) = &cache.spv_mask {
            d_spv *= m;
        }
        if let Some(m) = &cache.mip_mask {
            d_mip *= m;
        }
        d_spv *= &cache.spv_pre.mapv(|v| act.derivative(v));
        d_mip *= &cache.mip_pre.mapv(|v| act.derivative(v));
        Params {
            spv_w: standard(d_spv.t().dot(&cache.spv_in)),
            spv_b: d_spv.sum_axis(Axis(0)),
            mip_w: standard(d_mip.t().dot(&cache.mip_in)),
            mip_b: d_mip.sum_axis(Axis(0)),
            head_w,
            head_b,
        }
    }

    pub fn predict(&self, inputs: &BatchInputs) -> Result<Vec<usize>, DetectorError> {
        let cache = self.forward(inputs, None, None)?;
        Ok(cache
            .logits
            .rows()
            .into_iter()
            .map(|r| usize::from(r[1] > r[0]))
            .collect())
    }

    pub fn to_checkpoint(&self, provenance: serde_json::Value) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config,
            tensors: self
                .params
                .tensors()
                .into_iter()
                .map(|(name, data, shape)| NamedTensor {
                    name: name.into(),
                    shape,
                    data: data.to_vec(),
                })
                .collect(),
            provenance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Serialized detector: versioned header, config, named tensors and the
/// resolved run settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: DetectorConfig,
    pub tensors: Vec<NamedTensor>,
    #[serde(default)]
    pub provenance: serde_json::Value,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), DetectorError> {
        let text = serde_json::to_string(self).expect("checkpoint serializes");
        fs::write(path, text).map_err(|source| DetectorError::Io {
            path: path.to_owned(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, DetectorError> {
        let text = fs::read_to_string(path).map_err(|source| DetectorError::Io {
            path: path.to_owned(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| DetectorError::Checkpoint {
            path: path.to_owned(),
            reason: e.to_string(),
        })
    }

    pub fn into_detector(self) -> Result<Detector, DetectorError> {
        let bad = |reason: String| DetectorError::Checkpoint {
            path: PathBuf::new(),
            reason,
        };
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(bad(format!(
                "unsupported format {} v{}",
                self.format, self.version
            )));
        }
        let mut params = Params::zeros(&self.config);
        let expected = params.shapes();
        if self.tensors.len() != PARAM_NAMES.len() {
            return Err(bad(format!(
                "{} tensors, expected {}",
                self.tensors.len(),
                PARAM_NAMES.len()
            )));
        }
        for ((slot, tensor), (name, shape)) in params
            .slices_mut()
            .into_iter()
            .zip(&self.tensors)
            .zip(PARAM_NAMES.iter().zip(&expected))
        {
            if tensor.name != *name || &tensor.shape != shape || tensor.data.len() != slot.len() {
                return Err(bad(format!(
                    "tensor `{}` {:?} does not match `{name}` {shape:?}",
                    tensor.name, tensor.shape
                )));
            }
            slot.copy_from_slice(&tensor.data);
        }
        Detector::with_params(self.config, params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;
    use crate::distill::{batch_objective, DistillConfig};
    use ndarray::arr1;

    fn small(h: usize, activation: Activation, fusion: Fusion) -> DetectorConfig {
        DetectorConfig {
            hidden_dim: h,
            use_prompt_mip: true,
            dropout_rate: 0.1,
            activation,
            fusion,
        }
    }

    fn identity_detector(h: usize) -> Detector {
        let cfg = small(h, Activation::Identity, Fusion::Concat);
        let mut p = Params::zeros(&cfg);
        for i in 0..h {
            p.spv_w[[i, i]] = 1.0;
            p.mip_w[[i, i]] = 1.0;
        }
        Detector::with_params(cfg, p).unwrap()
    }

    #[test]
    fn identity_branch_projects_concat() {
        let d = identity_detector(3);
        let t = arr1(&[1.0, -2.0, 0.5]);
        let s = arr1(&[9.0, 9.0, 9.0]);
        assert_eq!(d.spv_branch(t.view(), s.view()).unwrap(), t);
        assert_eq!(d.mip_branch(s.view(), t.view()).unwrap(), s);
    }

    #[test]
    fn zero_inputs_give_zero_features() {
        for act in [Activation::Gelu, Activation::Tanh, Activation::Identity] {
            let mut d = Detector::new(small(4, act, Fusion::Concat), 3).unwrap();
            d.params.spv_b.fill(0.0);
            d.params.mip_b.fill(0.0);
            let z = Array1::zeros(4);
            assert!(d
                .spv_branch(z.view(), z.view())
                .unwrap()
                .iter()
                .all(|&v| v == 0.0));
            assert!(d
                .mip_branch(z.view(), z.view())
                .unwrap()
                .iter()
                .all(|&v| v == 0.0));
        }
    }

    #[test]
    fn agreeing_vectors_equal_branch_of_duplicate() {
        let d = Detector::new(small(4, Activation::Gelu, Fusion::Concat), 9).unwrap();
        let v = arr1(&[0.2, -0.4, 1.0, 0.0]);
        let direct = d.branch(&d.params.mip_w, &d.params.mip_b, v.view(), v.view());
        assert_eq!(d.mip_branch(v.view(), v.view()).unwrap(), direct);
    }

    #[test]
    fn head_zero_and_bias_domination() {
        let cfg = small(3, Activation::Gelu, Fusion::Concat);
        let mut d = Detector::new(cfg, 1).unwrap();
        d.params.head_w.fill(0.0);
        let f = arr1(&[0.3, 0.1, -2.0]);
        assert_eq!(d.classify(f.view(), f.view()).unwrap(), [0.0, 0.0]);
        d.params.head_b = arr1(&[0.0, 10.0]);
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Array2::from_shape_simple_fn((4, 3), || rng.random_range(-3.0..3.0));
            let inputs = BatchInputs {
                target: x.clone(),
                sentence: x.clone(),
                context_meaning: x.clone(),
                literal: x,
            };
            assert!(d.predict(&inputs).unwrap().iter().all(|&p| p == 1));
        }
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let d = Detector::new(small(3, Activation::Gelu, Fusion::Concat), 1).unwrap();
        let a = arr1(&[1.0, 2.0]);
        assert!(matches!(
            d.spv_branch(a.view(), a.view()),
            Err(DetectorError::Config(_))
        ));
        assert!(d.config.check_encoder_dim(4).is_err());
        assert!(DetectorConfig {
            dropout_rate: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn direct_mip_requires_flag_off() {
        let mut d = Detector::new(small(3, Activation::Gelu, Fusion::Concat), 1).unwrap();
        let v = arr1(&[1.0, 2.0, 3.0]);
        let w = arr1(&[0.5, -1.0, 0.0]);
        assert!(matches!(
            d.mip_branch_direct(v.view(), w.view()),
            Err(DetectorError::Config(_))
        ));
        let prompt = d.mip_branch(v.view(), w.view()).unwrap();
        d.config.use_prompt_mip = false;
        assert_eq!(d.mip_branch_direct(v.view(), w.view()).unwrap(), prompt);
        let other = arr1(&[-1.0, 0.0, 2.0]);
        assert_ne!(d.mip_branch_direct(other.view(), w.view()).unwrap(), prompt);
    }

    #[test]
    fn batched_forward_matches_single_sample_ops() {
        for fusion in [Fusion::Concat, Fusion::Sum] {
            let d = Detector::new(small(5, Activation::Gelu, fusion), 4).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let out = EncoderOutputs {
                target_vector: (0..5).map(|_| rng.random_range(-1.0..1.0)).collect(),
                sentence_vector: (0..5).map(|_| rng.random_range(-1.0..1.0)).collect(),
                context_meaning_vector: (0..5).map(|_| rng.random_range(-1.0..1.0)).collect(),
                literal_vector: (0..5).map(|_| rng.random_range(-1.0..1.0)).collect(),
                predicted_token: "x".into(),
                predicted_prob: 1.0,
            };
            let single = d.forward_one(&out).unwrap();
            let batch = d
                .forward(&BatchInputs::from_outputs(&[&out, &out]), None, None)
                .unwrap();
            for r in 0..2 {
                assert!((batch.logits[[r, 0]] - single.logits[0]).abs() < 1e-12);
                assert!((batch.logits[[r, 1]] - single.logits[1]).abs() < 1e-12);
            }
        }
    }

    fn random_inputs(rng: &mut ChaCha8Rng, n: usize, h: usize) -> BatchInputs {
        let mut m = || Array2::from_shape_simple_fn((n, h), || rng.random_range(-1.5..1.5));
        BatchInputs {
            target: m(),
            sentence: m(),
            context_meaning: m(),
            literal: m(),
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for (k, fusion) in [Fusion::Concat, Fusion::Sum].into_iter().enumerate() {
            for prompt in [true, false] {
                let mut cfg = small(3, Activation::Gelu, fusion);
                cfg.use_prompt_mip = prompt;
                let mut d = Detector::new(cfg, k as u64).unwrap();
                for b in [
                    &mut d.params.spv_b,
                    &mut d.params.mip_b,
                    &mut d.params.head_b,
                ] {
                    b.mapv_inplace(|_| rng.random_range(-0.5..0.5));
                }
                let inputs = random_inputs(&mut rng, 4, 3);
                let masks = DropoutMasks::sample(&mut rng, 4, 3, 0.3);
                let labels = [
                    Label::Literal,
                    Label::Metaphor,
                    Label::Metaphor,
                    Label::Literal,
                ];
                let teacher = Array2::from_shape_simple_fn((4, 2), || rng.random_range(-2.0..2.0));
                let cfg_kd = DistillConfig {
                    alpha: 0.5,
                    tau: 3.0,
                    enabled: true,
                };
                let loss = |d: &Detector| {
                    let c = d.forward(&inputs, Some(&masks), None).unwrap();
                    batch_objective(c.logits.view(), &labels, Some(teacher.view()), &cfg_kd)
                        .unwrap()
                        .0
                        .l_total
                };
                let cache = d.forward(&inputs, Some(&masks), None).unwrap();
                let (_, dz) =
                    batch_objective(cache.logits.view(), &labels, Some(teacher.view()), &cfg_kd)
                        .unwrap();
                let grads = d.backward(&cache, dz.view());
                let analytic: Vec<f64> = grads
                    .tensors()
                    .iter()
                    .flat_map(|(_, s, _)| s.to_vec())
                    .collect();
                let mut idx = 0;
                for (t, name) in PARAM_NAMES.iter().enumerate() {
                    let n = d.params.tensors()[t].1.len();
                    for j in 0..n {
                        let eps = 1e-6;
                        let mut up = d.clone();
                        up.params.slices_mut()[t][j] += eps;
                        let mut dn = d.clone();
                        dn.params.slices_mut()[t][j] -= eps;
                        let num = (loss(&up) - loss(&dn)) / (2.0 * eps);
                        let a = analytic[idx];
                        let rel = (num - a).abs() / num.abs().max(a.abs()).max(1e-6);
                        assert!(rel < 1e-4, "{name} [{j}]: {a} vs {num}");
                        idx += 1;
                    }
                }
            }
        }
    }

    #[test]
    fn flag_flip_changes_only_mip_source() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let inputs = random_inputs(&mut rng, 6, 4);
        let full = Detector::new(small(4, Activation::Gelu, Fusion::Concat), 8).unwrap();
        let mut ablated = full.clone();
        ablated.config.use_prompt_mip = false;
        assert_eq!(full.params.shapes(), ablated.params.shapes());
        let (mut pa, mut pb) = (ActivationProbe::default(), ActivationProbe::default());
        full.forward(&inputs, None, Some(&mut pa)).unwrap();
        ablated.forward(&inputs, None, Some(&mut pb)).unwrap();
        assert_eq!(pa.mip_source, [MipSource::PromptPrediction]);
        assert_eq!(pb.mip_source, [MipSource::InContextTarget]);
        assert_eq!(pa.spv_inputs, pb.spv_inputs);
        assert_eq!(
            pa.mip_inputs[0].slice(s![.., 4..]),
            pb.mip_inputs[0].slice(s![.., 4..])
        );
        assert_eq!(pb.mip_inputs[0].slice(s![.., ..4]), inputs.target);
        assert_eq!(pa.mip_inputs[0].slice(s![.., ..4]), inputs.context_meaning);
    }

    #[test]
    fn eval_forward_is_bitwise_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let inputs = random_inputs(&mut rng, 5, 6);
        let d = Detector::new(small(6, Activation::Gelu, Fusion::Concat), 2).unwrap();
        let a = d.forward(&inputs, None, None).unwrap().logits;
        let b = d.forward(&inputs, None, None).unwrap().logits;
        assert!(a
            .iter()
            .zip(b.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let d = Detector::new(small(4, Activation::Tanh, Fusion::Sum), 12).unwrap();
        d.to_checkpoint(serde_json::json!({"seed": 12}))
            .save(&path)
            .unwrap();
        let ck = Checkpoint::load(&path).unwrap();
        assert_eq!(ck.provenance["seed"], 12);
        let back = ck.into_detector().unwrap();
        assert_eq!(back, d);

        let mut bad = d.to_checkpoint(serde_json::Value::Null);
        bad.tensors[0].shape = vec![1, 1];
        assert!(bad.into_detector().is_err());
        let mut bad = d.to_checkpoint(serde_json::Value::Null);
        bad.config.hidden_dim = 5;
        assert!(bad.into_detector().is_err());
    }

    #[test]
    fn gelu_derivative_matches_difference_quotient() {
        for x in [-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let num = (Activation::Gelu.apply(x + h) - Activation::Gelu.apply(x - h)) / (2.0 * h);
            assert!((num - Activation::Gelu.derivative(x)).abs() < 1e-8);
        }
    }
}
