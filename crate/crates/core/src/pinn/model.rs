//! Fully connected GELU network of one input (time) and its output
//! transforms.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::distributions::{Distribution, Uniform};

use super::{rng_stream, PinnError, STREAM_INIT};
use crate::autodiff::{gelu_derivatives, Scalar, Tape, Var};

/// Tanh-approximated Gaussian error linear unit.
pub fn gelu(x: f64) -> f64 {
    gelu_derivatives(x).0
}

/// How network outputs become species concentrations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputTransform {
    /// `y = y0 + t * N(ln t)`: initial conditions hold by construction.
    HardIc,
    /// `y = N(t)`: initial conditions must be learned through a loss term.
    None,
}

impl std::str::FromStr for OutputTransform {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hard-ic" => Ok(Self::HardIc),
            "none" => Ok(Self::None),
            other => Err(format!("unknown output transform `{other}` (expected hard-ic or none)")),
        }
    }
}

impl std::fmt::Display for OutputTransform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::HardIc => "hard-ic",
            Self::None => "none",
        })
    }
}

/// Multilayer perceptron with flattened parameters: layer by layer, the
/// row-major `out x in` weight matrix followed by the bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    widths: Vec<usize>,
    params: Vec<f64>,
    seed: u64,
    transform: OutputTransform,
}

fn validate_widths(widths: &[usize]) -> Result<(), PinnError> {
    if widths.len() < 3 {
        return Err(PinnError::InvalidConfig(
            "network needs an input, at least one hidden layer and an output".into(),
        ));
    }
    if widths[0] != 1 {
        return Err(PinnError::InvalidConfig(format!("input width must be 1, got {}", widths[0])));
    }
    if widths.iter().any(|&w| w == 0) {
        return Err(PinnError::InvalidConfig("layer widths must be positive".into()));
    }
    Ok(())
}

/// Number of parameters of a network with the given widths.
pub fn parameter_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Xavier-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
pub fn xavier_init(widths: &[usize], seed: u64) -> Vec<f64> {
    let mut rng = rng_stream(seed, STREAM_INIT);
    let mut params = Vec::with_capacity(parameter_count(widths));
    for w in widths.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        params.extend((0..fan_in * fan_out).map(|_| dist.sample(&mut rng)));
        params.extend(std::iter::repeat(0.0).take(fan_out));
    }
    params
}

impl MlpModel {
    /// Xavier-initialised network.
    pub fn new(widths: &[usize], seed: u64, transform: OutputTransform) -> Result<Self, PinnError> {
        validate_widths(widths)?;
        Ok(Self {
            widths: widths.to_vec(),
            params: xavier_init(widths, seed),
            seed,
            transform,
        })
    }

    /// Network with explicit parameters.
    pub fn from_params(
        widths: &[usize],
        params: Vec<f64>,
        seed: u64,
        transform: OutputTransform,
    ) -> Result<Self, PinnError> {
        validate_widths(widths)?;
        let expected = parameter_count(widths);
        if params.len() != expected {
            return Err(PinnError::InvalidConfig(format!(
                "expected {expected} parameters, got {}",
                params.len()
            )));
        }
        Ok(Self {
            widths: widths.to_vec(),
            params,
            seed,
            transform,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn transform(&self) -> OutputTransform {
        self.transform
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn layers(&self) -> impl Iterator<Item = (ArrayView2<'_, f64>, ArrayView1<'_, f64>)> + '_ {
        let mut offset = 0;
        self.widths.windows(2).map(move |w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = &self.params[offset..offset + fan_in * fan_out];
            offset += fan_in * fan_out;
            let bias = &self.params[offset..offset + fan_out];
            offset += fan_out;
            (
                ArrayView2::from_shape((fan_out, fan_in), weights).expect("sized by widths"),
                ArrayView1::from(bias),
            )
        })
    }

    /// Network input for time `t`: `ln t` under the hard-IC transform.
    pub fn input<S: Scalar>(&self, t: S) -> Result<S, PinnError> {
        match self.transform {
            OutputTransform::HardIc => {
                if !(t.value() > 0.0) {
                    return Err(PinnError::InvalidTime(t.value()));
                }
                Ok(t.ln()?)
            }
            OutputTransform::None => Ok(t),
        }
    }

    /// Raw network output `N(input(t))`.
    pub fn forward<S: Scalar>(&self, t: S) -> Result<Vec<S>, PinnError> {
        let x = self.input(t)?;
        Ok(self.forward_raw(x))
    }

    /// Network output for an already transformed input.
    pub fn forward_raw<S: Scalar>(&self, x: S) -> Vec<S> {
        let n_layers = self.widths.len() - 1;
        let mut a = vec![x];
        for (l, (w, b)) in self.layers().enumerate() {
            let mut z: Vec<S> = b.iter().map(|&bi| S::constant(bi)).collect();
            for (i, zi) in z.iter_mut().enumerate() {
                for (j, aj) in a.iter().enumerate() {
                    *zi = *zi + *aj * w[[i, j]];
                }
            }
            if l + 1 < n_layers {
                for zi in z.iter_mut() {
                    *zi = zi.gelu();
                }
            }
            a = z;
        }
        a
    }

    /// Batched plain evaluation of `N` on transformed inputs (`rows x 1`).
    pub fn forward_batch(&self, inputs: &Array2<f64>) -> Array2<f64> {
        let n_layers = self.widths.len() - 1;
        let mut a = inputs.clone();
        for (l, (w, b)) in self.layers().enumerate() {
            let mut z = a.dot(&w.t());
            z += &b;
            if l + 1 < n_layers {
                z.mapv_inplace(gelu);
            }
            a = z;
        }
        a
    }

    /// Registers weights and biases on `tape` as parameters, in
    /// flattening order.
    pub fn register(&self, tape: &mut Tape) -> Vec<Var> {
        let mut vars = Vec::with_capacity(2 * (self.widths.len() - 1));
        for (w, b) in self.layers() {
            vars.push(tape.parameter(w.to_owned()));
            vars.push(tape.parameter(b.to_owned().insert_axis(ndarray::Axis(0))));
        }
        vars
    }

    /// Records `N(x)` using parameters from [`Self::register`].
    pub fn record_with(&self, tape: &mut Tape, params: &[Var], x: Var) -> Var {
        let n_layers = self.widths.len() - 1;
        assert_eq!(params.len(), 2 * n_layers, "one weight and one bias per layer");
        let mut a = x;
        for l in 0..n_layers {
            a = tape.linear(a, params[2 * l], params[2 * l + 1]);
            if l + 1 < n_layers {
                a = tape.gelu(a);
            }
        }
        a
    }

    /// Registers the parameters and records `N(x)`.
    pub fn record(&self, tape: &mut Tape, x: Var) -> Var {
        let params = self.register(tape);
        self.record_with(tape, &params, x)
    }
}

/// `y0 + t * N(ln t)`; exactly `y0` at `t = 0` without evaluating the
/// network. With a dual `t` the tangent is `dy/dt = N + dN/d(ln t)`; at
/// `t = 0` the derivative is not defined and the tangent is reported as 0.
pub fn hard_ic_transform<S: Scalar>(model: &MlpModel, y0: &[f64], t: S) -> Result<Vec<S>, PinnError> {
    if y0.len() != model.output_width() {
        return Err(PinnError::SpeciesMismatch(format!(
            "{} initial values for {} network outputs",
            y0.len(),
            model.output_width()
        )));
    }
    let tv = t.value();
    if tv < 0.0 || !tv.is_finite() {
        return Err(PinnError::InvalidTime(tv));
    }
    if tv == 0.0 {
        return Ok(y0.iter().map(|&v| S::constant(v)).collect());
    }
    let ln_t = t.ln()?;
    let out = model.forward_raw(ln_t);
    Ok(out.into_iter().zip(y0).map(|(n, &y)| t * n + y).collect())
}
