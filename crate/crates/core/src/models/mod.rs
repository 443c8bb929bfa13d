//! The six-network bundle: extractor `F`, target/bias disentanglers and
//! predictors, and the two branches of the mutual-information estimator.

mod checkpoint;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{affine, Parameter, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Initial value of the content-score scale.
pub const ALPHA_INIT: f64 = 1.0;
/// Initial value of the edge-softmax temperature.
pub const TAU_INIT: f64 = 10.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalActivation {
    #[default]
    None,
    Sigmoid,
    Relu,
}

/// Layer widths of one fully connected network; ReLU between layers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub layer_sizes: Vec<usize>,
    #[serde(default)]
    pub final_activation: FinalActivation,
}

impl NetworkSpec {
    pub fn new(layer_sizes: Vec<usize>) -> Self {
        Self {
            layer_sizes,
            final_activation: FinalActivation::None,
        }
    }

    pub fn with_final(mut self, act: FinalActivation) -> Self {
        self.final_activation = act;
        self
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    fn validate(&self, what: &str) -> Result<()> {
        if self.layer_sizes.len() < 2 || self.layer_sizes.contains(&0) {
            return Err(Error::Config(format!(
                "{what}: layer sizes {:?} need at least two positive entries",
                self.layer_sizes
            )));
        }
        Ok(())
    }
}

/// Network specs for every member of a [`ModelBundle`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub extractor: NetworkSpec,
    pub target_disentangler: NetworkSpec,
    pub target_predictor: NetworkSpec,
    pub bias_disentangler: NetworkSpec,
    /// One head per bias channel.
    pub bias_predictors: Vec<NetworkSpec>,
    pub mi_target: NetworkSpec,
    pub mi_bias: NetworkSpec,
}

impl ArchSpec {
    /// Colored-digit layout: MLP extractor `[d_x, 256, 1024]`, disentanglers
    /// `1024 -> 128`, target head `128-64-10`, three `128-64-8` color heads
    /// and `128-64-32-32` estimator branches.
    pub fn colored_digits(input_dim: usize) -> Self {
        Self::colored_digits_sized(input_dim, &[256, 1024], 128)
    }

    /// Colored-digit layout with a custom extractor and disentangler width.
    pub fn colored_digits_sized(input_dim: usize, hidden: &[usize], feature: usize) -> Self {
        let mut f = vec![input_dim];
        f.extend_from_slice(hidden);
        let h = *f.last().unwrap();
        Self {
            extractor: NetworkSpec::new(f).with_final(FinalActivation::Relu),
            target_disentangler: NetworkSpec::new(vec![h, feature]),
            target_predictor: NetworkSpec::new(vec![feature, 64, 10]),
            bias_disentangler: NetworkSpec::new(vec![h, feature]),
            bias_predictors: vec![NetworkSpec::new(vec![feature, 64, 8]); 3],
            mi_target: NetworkSpec::new(vec![feature, 64, 32, 32]),
            mi_bias: NetworkSpec::new(vec![feature, 64, 32, 32]),
        }
    }

    /// Tabular layout: extractor `d_x-64`, disentanglers `64-32`, a single
    /// logit target head and one head per protected attribute.
    pub fn tabular(input_dim: usize, bias_classes: &[usize]) -> Self {
        Self::tabular_sized(input_dim, &[64], 32, bias_classes)
    }

    pub fn tabular_sized(input_dim: usize, hidden: &[usize], feature: usize, bias_classes: &[usize]) -> Self {
        let mut f = vec![input_dim];
        f.extend_from_slice(hidden);
        let h = *f.last().unwrap();
        Self {
            extractor: NetworkSpec::new(f).with_final(FinalActivation::Relu),
            target_disentangler: NetworkSpec::new(vec![h, feature]),
            target_predictor: NetworkSpec::new(vec![feature, 1]),
            bias_disentangler: NetworkSpec::new(vec![h, feature]),
            bias_predictors: bias_classes
                .iter()
                .map(|&k| NetworkSpec::new(vec![feature, k]))
                .collect(),
            mi_target: NetworkSpec::new(vec![feature, 32, 32]),
            mi_bias: NetworkSpec::new(vec![feature, 32, 32]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("extractor", &self.extractor),
            ("target_disentangler", &self.target_disentangler),
            ("target_predictor", &self.target_predictor),
            ("bias_disentangler", &self.bias_disentangler),
            ("mi_target", &self.mi_target),
            ("mi_bias", &self.mi_bias),
        ];
        for (n, s) in named {
            s.validate(n)?;
        }
        if self.bias_predictors.is_empty() {
            return Err(Error::Config("at least one bias head is required".into()));
        }
        for (k, s) in self.bias_predictors.iter().enumerate() {
            s.validate(&format!("bias_predictors[{k}]"))?;
        }
        let chain = |what: &str, from: usize, to: usize| {
            if from == to {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "{what}: output width {from} feeds input width {to}"
                )))
            }
        };
        let h = self.extractor.output_dim();
        chain("extractor -> target_disentangler", h, self.target_disentangler.input_dim())?;
        chain("extractor -> bias_disentangler", h, self.bias_disentangler.input_dim())?;
        let dy = self.target_disentangler.output_dim();
        let db = self.bias_disentangler.output_dim();
        chain("target_disentangler -> target_predictor", dy, self.target_predictor.input_dim())?;
        chain("target_disentangler -> mi_target", dy, self.mi_target.input_dim())?;
        chain("bias_disentangler -> mi_bias", db, self.mi_bias.input_dim())?;
        for p in &self.bias_predictors {
            chain("bias_disentangler -> bias_predictor", db, p.input_dim())?;
        }
        if self.mi_target.output_dim() != self.mi_bias.output_dim() {
            return Err(Error::Config(format!(
                "estimator branches emit {} and {} dimensions",
                self.mi_target.output_dim(),
                self.mi_bias.output_dim()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Parameter,
    pub bias: Parameter,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub spec: NetworkSpec,
    pub layers: Vec<Dense>,
}

impl Mlp {
    fn init(name: &str, spec: &NetworkSpec, rng: &mut ChaCha8Rng) -> Self {
        let layers = spec
            .layer_sizes
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| rng.gen_range(-bound..bound))
                    .collect();
                Dense {
                    weight: Parameter::new(
                        format!("{name}.{l}.weight"),
                        Tensor::new(vec![fan_in, fan_out], data).unwrap(),
                    ),
                    bias: Parameter::new(format!("{name}.{l}.bias"), Tensor::zeros(vec![fan_out])),
                }
            })
            .collect();
        Self {
            spec: spec.clone(),
            layers,
        }
    }

    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BoundMlp<'t> {
        BoundMlp {
            layers: self
                .layers
                .iter()
                .map(|d| (tape.param(&d.weight, trainable), tape.param(&d.bias, trainable)))
                .collect(),
            final_activation: self.spec.final_activation,
        }
    }

    fn params(&self) -> impl Iterator<Item = &Parameter> {
        self.layers.iter().flat_map(|d| [&d.weight, &d.bias])
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.layers.iter_mut().flat_map(|d| [&mut d.weight, &mut d.bias])
    }
}

/// An [`Mlp`] whose parameters are bound to a tape.
pub struct BoundMlp<'t> {
    layers: Vec<(Var<'t>, Var<'t>)>,
    final_activation: FinalActivation,
}

impl<'t> BoundMlp<'t> {
    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            h = affine(h, w, b)?;
            if l < last {
                h = h.relu();
            }
        }
        Ok(match self.final_activation {
            FinalActivation::None => h,
            FinalActivation::Sigmoid => h.sigmoid(),
            FinalActivation::Relu => h.relu(),
        })
    }

    fn vars(&self) -> impl Iterator<Item = Var<'t>> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }
}

/// Disjoint parameter groups, each updated by its own training phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    /// `F`
    Extractor,
    /// `D^y`, `P^y`
    Target,
    /// `D^b`, every `P^b` head
    Bias,
    /// `M_y`, `M_b`, `alpha`, `tau`
    Estimator,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 4] = [
        ParamGroup::Extractor,
        ParamGroup::Target,
        ParamGroup::Bias,
        ParamGroup::Estimator,
    ];
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub arch: ArchSpec,
    pub seed: u64,
    pub extractor: Mlp,
    pub target_disentangler: Mlp,
    pub target_predictor: Mlp,
    pub bias_disentangler: Mlp,
    pub bias_predictors: Vec<Mlp>,
    pub mi_target: Mlp,
    pub mi_bias: Mlp,
    pub alpha: Parameter,
    pub tau: Parameter,
}

/// Builds a bundle with weights drawn uniformly from `±1/sqrt(fan_in)` and
/// zero biases, deterministically from `seed`.
pub fn build_bundle(arch: &ArchSpec, seed: u64) -> Result<ModelBundle> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extractor = Mlp::init("F", &arch.extractor, &mut rng);
    let target_disentangler = Mlp::init("Dy", &arch.target_disentangler, &mut rng);
    let target_predictor = Mlp::init("Py", &arch.target_predictor, &mut rng);
    let bias_disentangler = Mlp::init("Db", &arch.bias_disentangler, &mut rng);
    let bias_predictors = arch
        .bias_predictors
        .iter()
        .enumerate()
        .map(|(k, s)| Mlp::init(&format!("Pb{k}"), s, &mut rng))
        .collect();
    let mi_target = Mlp::init("My", &arch.mi_target, &mut rng);
    let mi_bias = Mlp::init("Mb", &arch.mi_bias, &mut rng);
    Ok(ModelBundle {
        arch: arch.clone(),
        seed,
        extractor,
        target_disentangler,
        target_predictor,
        bias_disentangler,
        bias_predictors,
        mi_target,
        mi_bias,
        alpha: Parameter::new("alpha", Tensor::scalar(ALPHA_INIT)),
        tau: Parameter::new("tau", Tensor::scalar(TAU_INIT)),
    })
}

impl ModelBundle {
    pub fn input_dim(&self) -> usize {
        self.arch.extractor.input_dim()
    }

    /// True when the target head emits a single logit (binary task).
    pub fn binary_target(&self) -> bool {
        self.arch.target_predictor.output_dim() == 1
    }

    pub fn group_params(&self, group: ParamGroup) -> Vec<&Parameter> {
        match group {
            ParamGroup::Extractor => self.extractor.params().collect(),
            ParamGroup::Target => self
                .target_disentangler
                .params()
                .chain(self.target_predictor.params())
                .collect(),
            ParamGroup::Bias => self
                .bias_disentangler
                .params()
                .chain(self.bias_predictors.iter().flat_map(Mlp::params))
                .collect(),
            ParamGroup::Estimator => self
                .mi_target
                .params()
                .chain(self.mi_bias.params())
                .chain([&self.alpha, &self.tau])
                .collect(),
        }
    }

    pub fn group_params_mut(&mut self, group: ParamGroup) -> Vec<&mut Parameter> {
        match group {
            ParamGroup::Extractor => self.extractor.params_mut().collect(),
            ParamGroup::Target => self
                .target_disentangler
                .params_mut()
                .chain(self.target_predictor.params_mut())
                .collect(),
            ParamGroup::Bias => self
                .bias_disentangler
                .params_mut()
                .chain(self.bias_predictors.iter_mut().flat_map(Mlp::params_mut))
                .collect(),
            ParamGroup::Estimator => self
                .mi_target
                .params_mut()
                .chain(self.mi_bias.params_mut())
                .chain([&mut self.alpha, &mut self.tau])
                .collect(),
        }
    }

    /// Every parameter, in checkpoint order.
    pub fn all_params(&self) -> Vec<&Parameter> {
        ParamGroup::ALL
            .iter()
            .flat_map(|&g| self.group_params(g))
            .collect()
    }

    pub fn all_params_mut(&mut self) -> Vec<&mut Parameter> {
        let ModelBundle {
            extractor,
            target_disentangler,
            target_predictor,
            bias_disentangler,
            bias_predictors,
            mi_target,
            mi_bias,
            alpha,
            tau,
            ..
        } = self;
        extractor
            .params_mut()
            .chain(target_disentangler.params_mut())
            .chain(target_predictor.params_mut())
            .chain(bias_disentangler.params_mut())
            .chain(bias_predictors.iter_mut().flat_map(Mlp::params_mut))
            .chain(mi_target.params_mut())
            .chain(mi_bias.params_mut())
            .chain([alpha, tau])
            .collect()
    }

    /// Binds all networks to `tape`; only groups in `trainable` get gradients.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: &[ParamGroup]) -> BoundBundle<'t> {
        let on = |g| trainable.contains(&g);
        BoundBundle {
            extractor: self.extractor.bind(tape, on(ParamGroup::Extractor)),
            target_disentangler: self.target_disentangler.bind(tape, on(ParamGroup::Target)),
            target_predictor: self.target_predictor.bind(tape, on(ParamGroup::Target)),
            bias_disentangler: self.bias_disentangler.bind(tape, on(ParamGroup::Bias)),
            bias_predictors: self
                .bias_predictors
                .iter()
                .map(|m| m.bind(tape, on(ParamGroup::Bias)))
                .collect(),
            mi_target: self.mi_target.bind(tape, on(ParamGroup::Estimator)),
            mi_bias: self.mi_bias.bind(tape, on(ParamGroup::Estimator)),
            alpha: tape.param(&self.alpha, on(ParamGroup::Estimator)),
            tau: tape.param(&self.tau, on(ParamGroup::Estimator)),
        }
    }

    /// Tape-free forward pass.
    pub fn forward(&self, x: &Tensor) -> Result<BatchForward> {
        let tape = Tape::new();
        let bound = self.bind(&tape, &[]);
        let fwd = bound.forward(tape.leaf(x))?;
        Ok(BatchForward {
            h: fwd.h.to_tensor(),
            hy: fwd.hy.to_tensor(),
            hb: fwd.hb.to_tensor(),
            target_logits: fwd.target_logits.to_tensor(),
            bias_logits: fwd.bias_logits.iter().map(Var::to_tensor).collect(),
        })
    }

    /// Estimator-branch embeddings `(M_y(hy), M_b(hb))`.
    pub fn embed(&self, hy: &Tensor, hb: &Tensor) -> Result<(Tensor, Tensor)> {
        let tape = Tape::new();
        let bound = self.bind(&tape, &[]);
        let (ey, eb) = bound.embed(tape.leaf(hy), tape.leaf(hb))?;
        Ok((ey.to_tensor(), eb.to_tensor()))
    }

    /// Target-head logits for `x`, evaluated in chunks of `chunk` rows.
    pub fn target_logits(&self, x: &Tensor, chunk: usize) -> Result<Tensor> {
        let n = x.rows();
        let mut out = Vec::new();
        let mut cols = 0;
        let mut start = 0;
        while start < n {
            let idx: Vec<usize> = (start..(start + chunk).min(n)).collect();
            let tape = Tape::new();
            let bound = self.bind(&tape, &[]);
            let xb = tape.leaf(&x.select_rows(&idx));
            let logits = bound.target_logits(xb)?;
            cols = logits.value().cols();
            out.extend(logits.value().data.iter().copied());
            start += chunk;
        }
        Tensor::new(vec![n, cols], out)
    }
}

/// Tape-bound [`ModelBundle`].
pub struct BoundBundle<'t> {
    pub extractor: BoundMlp<'t>,
    pub target_disentangler: BoundMlp<'t>,
    pub target_predictor: BoundMlp<'t>,
    pub bias_disentangler: BoundMlp<'t>,
    pub bias_predictors: Vec<BoundMlp<'t>>,
    pub mi_target: BoundMlp<'t>,
    pub mi_bias: BoundMlp<'t>,
    pub alpha: Var<'t>,
    pub tau: Var<'t>,
}

/// Per-batch activations.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchForward {
    pub h: Tensor,
    pub hy: Tensor,
    pub hb: Tensor,
    pub target_logits: Tensor,
    pub bias_logits: Vec<Tensor>,
}

/// Tape-level activations of one batch.
pub struct BoundForward<'t> {
    pub h: Var<'t>,
    pub hy: Var<'t>,
    pub hb: Var<'t>,
    pub target_logits: Var<'t>,
    pub bias_logits: Vec<Var<'t>>,
}

impl<'t> BoundBundle<'t> {
    fn check_input(&self, x: Var<'t>) -> Result<()> {
        let want = self.extractor.layers[0].0.value().shape[0];
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != want {
            return Err(Error::dim(format!(
                "input shape {shape:?}, extractor expects {want} features"
            )));
        }
        Ok(())
    }

    pub fn features(&self, x: Var<'t>) -> Result<Var<'t>> {
        self.check_input(x)?;
        self.extractor.forward(x)
    }

    pub fn target_logits(&self, x: Var<'t>) -> Result<Var<'t>> {
        let h = self.features(x)?;
        self.target_predictor
            .forward(self.target_disentangler.forward(h)?)
    }

    pub fn bias_logits(&self, hb: Var<'t>) -> Result<Vec<Var<'t>>> {
        self.bias_predictors.iter().map(|p| p.forward(hb)).collect()
    }

    pub fn forward(&self, x: Var<'t>) -> Result<BoundForward<'t>> {
        let h = self.features(x)?;
        let hy = self.target_disentangler.forward(h)?;
        let hb = self.bias_disentangler.forward(h)?;
        Ok(BoundForward {
            h,
            hy,
            hb,
            target_logits: self.target_predictor.forward(hy)?,
            bias_logits: self.bias_logits(hb)?,
        })
    }

    pub fn embed(&self, hy: Var<'t>, hb: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        Ok((self.mi_target.forward(hy)?, self.mi_bias.forward(hb)?))
    }

    /// Tape variables of `group`, in the same order as
    /// [`ModelBundle::group_params_mut`].
    pub fn group_vars(&self, group: ParamGroup) -> Vec<Var<'t>> {
        match group {
            ParamGroup::Extractor => self.extractor.vars().collect(),
            ParamGroup::Target => self
                .target_disentangler
                .vars()
                .chain(self.target_predictor.vars())
                .collect(),
            ParamGroup::Bias => self
                .bias_disentangler
                .vars()
                .chain(self.bias_predictors.iter().flat_map(BoundMlp::vars))
                .collect(),
            ParamGroup::Estimator => self
                .mi_target
                .vars()
                .chain(self.mi_bias.vars())
                .chain([self.alpha, self.tau])
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests;
