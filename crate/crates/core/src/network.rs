//! Synchronous layered network with threshold activation and Oja learning.
//!
//! Layer 0 holds input neurons driven by the environment. Every neuron on
//! layer `l >= 1` is fully connected to layer `l - 1`; its weights form one
//! contiguous row of the layer matrix.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::scalar::{masked_sum, Scalar};

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("vector length {found} does not match layer width {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("layer {0} has no incoming weights")]
    InputLayer(usize),
    #[error("neuron ({layer}, {index}) does not exist")]
    NoSuchNeuron { layer: usize, index: usize },
    #[error("layer {0} already has an engaged neuron this step")]
    AlreadyEngaged(usize),
    #[error("invalid network parameters: {0}")]
    Params(String),
    #[error("weight {value} on edge {input} -> ({layer}, {target}) left [0, 1]")]
    WeightOutOfRange { layer: usize, target: usize, input: usize, value: f64 },
}

/// A neuron address: layer and index within the layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub struct NeuronId {
    pub layer: u32,
    pub index: u32,
}

impl NeuronId {
    pub const fn new(layer: u32, index: u32) -> Self {
        Self { layer, index }
    }
}

impl std::fmt::Display for NeuronId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "N{}.{}", self.layer, self.index)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<S> {
    /// Highest layer number.
    pub max_layer: usize,
    /// Neurons per layer.
    pub width: usize,
    pub tau: S,
    pub eta: S,
}

impl<S: Scalar> NetworkParams<S> {
    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.max_layer < 1 {
            return Err(NetworkError::Params("at least one non-input layer is required".into()));
        }
        if self.width < 1 {
            return Err(NetworkError::Params("layers need at least one neuron".into()));
        }
        if self.tau <= S::zero() {
            return Err(NetworkError::Params(format!("threshold must be positive, got {:?}", self.tau)));
        }
        if self.eta <= S::zero() {
            return Err(NetworkError::Params(format!("learning rate must be positive, got {:?}", self.eta)));
        }
        Ok(())
    }
}

/// `w . x` for a binary input vector.
pub fn potential<S: Scalar>(w_row: &[S], x: &[bool]) -> Result<S, NetworkError> {
    if w_row.len() != x.len() {
        return Err(NetworkError::LengthMismatch { expected: w_row.len(), found: x.len() });
    }
    Ok(masked_sum(w_row, x))
}

/// Fires iff `pot >= tau`.
pub fn activation<S: Scalar>(pot: &S, tau: &S) -> bool {
    pot >= tau
}

/// One application of Oja's rule, `w' = w + eta z (x - z w)` with `z = w . x`.
pub fn oja_update<S: Scalar>(w: &[S], x: &[bool], eta: &S) -> Result<Vec<S>, NetworkError> {
    let mut out = w.to_vec();
    let z = potential(w, x)?;
    oja_apply(&mut out, x, eta, &z);
    Ok(out)
}

/// In-place Oja step with a precomputed potential `z`.
pub(crate) fn oja_apply<S: Scalar>(w: &mut [S], x: &[bool], eta: &S, z: &S) {
    if z.is_zero() {
        return;
    }
    let gain = eta.clone() * z.clone();
    for (wi, &xi) in w.iter_mut().zip(x) {
        let zw = z.clone() * wi.clone();
        let delta = if xi { S::one() - zw } else { S::zero() - zw };
        *wi = wi.clone() + gain.clone() * delta;
    }
}

/// Full network state at one time step.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkState<S> {
    params: NetworkParams<S>,
    /// `weights[l - 1]`: row-major `width x width`; row `v` holds the weights
    /// from every layer-`(l-1)` neuron into neuron `v` of layer `l`.
    weights: Vec<Vec<S>>,
    /// `firing[l]` for `l` in `0..=max_layer`.
    firing: Vec<Vec<bool>>,
    /// Firing at the previous time step, needed by the learning rule.
    prev_firing: Vec<Vec<bool>>,
    /// `potentials[l - 1]`: potentials computed for the current time.
    potentials: Vec<Vec<S>>,
    /// `engaged[l - 1]`.
    engaged: Vec<Vec<bool>>,
    time: u64,
}

impl<S: Scalar> NetworkState<S> {
    /// Clean start: every non-input weight equals `1 / k^lmax`, nothing fires.
    pub fn new(params: NetworkParams<S>, k: usize, lmax: usize) -> Result<Self, NetworkError> {
        let w0 = S::inverse_power(k as u64, lmax as u32);
        Self::with_uniform_weights(params, w0)
    }

    pub fn with_uniform_weights(params: NetworkParams<S>, w0: S) -> Result<Self, NetworkError> {
        params.validate()?;
        let n = params.width;
        let layers = params.max_layer;
        Ok(Self {
            weights: vec![vec![w0; n * n]; layers],
            firing: vec![vec![false; n]; layers + 1],
            prev_firing: vec![vec![false; n]; layers + 1],
            potentials: vec![vec![S::zero(); n]; layers],
            engaged: vec![vec![false; n]; layers],
            time: 0,
            params,
        })
    }

    pub fn params(&self) -> &NetworkParams<S> {
        &self.params
    }

    pub fn width(&self) -> usize {
        self.params.width
    }

    pub fn max_layer(&self) -> usize {
        self.params.max_layer
    }

    pub fn time(&self) -> u64 {
        self.time
    }

    pub fn tau(&self) -> &S {
        &self.params.tau
    }

    pub fn eta(&self) -> &S {
        &self.params.eta
    }

    fn check_neuron(&self, layer: usize, index: usize) -> Result<(), NetworkError> {
        if layer == 0 {
            return Err(NetworkError::InputLayer(0));
        }
        if layer > self.params.max_layer || index >= self.params.width {
            return Err(NetworkError::NoSuchNeuron { layer, index });
        }
        Ok(())
    }

    /// Incoming weights of neuron `index` on `layer >= 1`.
    pub fn row(&self, layer: usize, index: usize) -> Result<&[S], NetworkError> {
        self.check_neuron(layer, index)?;
        let n = self.params.width;
        Ok(&self.weights[layer - 1][index * n..(index + 1) * n])
    }

    pub fn row_mut(&mut self, layer: usize, index: usize) -> Result<&mut [S], NetworkError> {
        self.check_neuron(layer, index)?;
        let n = self.params.width;
        Ok(&mut self.weights[layer - 1][index * n..(index + 1) * n])
    }

    pub fn weight(&self, layer: usize, target: usize, source: usize) -> Result<&S, NetworkError> {
        self.row(layer, target)?
            .get(source)
            .ok_or(NetworkError::NoSuchNeuron { layer: layer - 1, index: source })
    }

    /// The whole weight matrix feeding `layer`, row-major.
    pub fn layer_weights(&self, layer: usize) -> Result<&[S], NetworkError> {
        self.check_neuron(layer, 0)?;
        Ok(&self.weights[layer - 1])
    }

    pub fn firing(&self, layer: usize) -> &[bool] {
        &self.firing[layer]
    }

    pub fn fires(&self, neuron: NeuronId) -> bool {
        self.firing
            .get(neuron.layer as usize)
            .and_then(|f| f.get(neuron.index as usize))
            .copied()
            .unwrap_or(false)
    }

    /// Potentials of `layer` at the current time.
    pub fn potentials(&self, layer: usize) -> Result<&[S], NetworkError> {
        self.check_neuron(layer, 0)?;
        Ok(&self.potentials[layer - 1])
    }

    pub fn engaged(&self, layer: usize) -> Result<&[bool], NetworkError> {
        self.check_neuron(layer, 0)?;
        Ok(&self.engaged[layer - 1])
    }

    /// Advances time by one and recomputes firing from the previous step.
    ///
    /// Layer 0 takes `input`; layer `l >= 1` fires from the layer-`(l-1)`
    /// firing and layer-`l` weights of the previous time. All engaged flags
    /// are cleared; weights are untouched.
    pub fn propagate(&mut self, input: &[bool]) -> Result<(), NetworkError> {
        let n = self.params.width;
        if input.len() != n {
            return Err(NetworkError::LengthMismatch { expected: n, found: input.len() });
        }
        std::mem::swap(&mut self.firing, &mut self.prev_firing);
        self.firing[0].copy_from_slice(input);
        let mut active = Vec::new();
        for l in 1..=self.params.max_layer {
            // ascending, so each sum adds in the same order as `masked_sum`
            active.clear();
            active.extend(self.prev_firing[l - 1].iter().enumerate().filter(|(_, &on)| on).map(|(i, _)| i));
            let rows = &self.weights[l - 1];
            let pots = &mut self.potentials[l - 1];
            let fire = &mut self.firing[l];
            for v in 0..n {
                let row = &rows[v * n..(v + 1) * n];
                let p = active.iter().fold(S::zero(), |acc, &i| acc + row[i].clone());
                fire[v] = activation(&p, &self.params.tau);
                pots[v] = p;
            }
            self.engaged[l - 1].iter_mut().for_each(|e| *e = false);
        }
        self.time += 1;
        Ok(())
    }

    /// Engages one neuron at the current time and applies Oja's rule against
    /// the previous-time firing of its input layer. At most one neuron per
    /// layer may be engaged per step.
    pub fn engage(&mut self, neuron: NeuronId) -> Result<(), NetworkError> {
        let (l, v) = (neuron.layer as usize, neuron.index as usize);
        self.check_neuron(l, v)?;
        if self.engaged[l - 1].iter().any(|&e| e) {
            return Err(NetworkError::AlreadyEngaged(l));
        }
        self.engaged[l - 1][v] = true;
        let n = self.params.width;
        let z = self.potentials[l - 1][v].clone();
        let x = &self.prev_firing[l - 1];
        oja_apply(&mut self.weights[l - 1][v * n..(v + 1) * n], x, &self.params.eta, &z);
        Ok(())
    }

    /// `propagate` followed by an optional engagement.
    pub fn step(&mut self, input: &[bool], directive: Option<NeuronId>) -> Result<(), NetworkError> {
        if let Some(d) = directive {
            self.check_neuron(d.layer as usize, d.index as usize)?;
        }
        self.propagate(input)?;
        if let Some(d) = directive {
            self.engage(d)?;
        }
        Ok(())
    }

    /// Zeroes all firing, potentials and engaged flags, keeping weights and time.
    pub fn quiesce(&mut self) {
        for f in self.firing.iter_mut().chain(self.prev_firing.iter_mut()) {
            f.iter_mut().for_each(|b| *b = false);
        }
        for p in &mut self.potentials {
            p.iter_mut().for_each(|x| *x = S::zero());
        }
        for e in &mut self.engaged {
            e.iter_mut().for_each(|b| *b = false);
        }
    }

    /// Checks that every weight of one row lies in `[0, 1]`.
    pub fn check_row_bounds(&self, layer: usize, index: usize) -> Result<(), NetworkError> {
        for (source, w) in self.row(layer, index)?.iter().enumerate() {
            if *w < S::zero() || *w > S::one() {
                return Err(NetworkError::WeightOutOfRange { layer, target: index, input: source, value: w.to_f64_lossy() });
            }
        }
        Ok(())
    }

    pub fn check_weight_bounds(&self) -> Result<(), NetworkError> {
        for l in 1..=self.params.max_layer {
            for v in 0..self.params.width {
                self.check_row_bounds(l, v)?;
            }
        }
        Ok(())
    }
}

const SNAPSHOT_MAGIC: &[u8; 4] = b"OJWS";
pub const SNAPSHOT_VERSION: u32 = 1;

/// Dense weight matrix of one layer at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightSnapshot {
    pub layer: u32,
    pub width: u32,
    pub time: u64,
    /// Row-major `width x width`.
    pub weights: Vec<f64>,
}

impl WeightSnapshot {
    pub fn capture<S: Scalar>(net: &NetworkState<S>, layer: usize) -> Result<Self, NetworkError> {
        Ok(Self {
            layer: layer as u32,
            width: net.width() as u32,
            time: net.time(),
            weights: net.layer_weights(layer)?.iter().map(Scalar::to_f64_lossy).collect(),
        })
    }

    pub fn capture_all<S: Scalar>(net: &NetworkState<S>) -> Vec<Self> {
        (1..=net.max_layer()).map(|l| Self::capture(net, l).expect("layer in range")).collect()
    }

    /// Binary layout, little endian: magic `OJWS`, version u32, layer u32,
    /// width u32, time u64, then `width^2` f64 values.
    pub fn write_binary<W: Write>(&self, out: &mut W) -> io::Result<()> {
        out.write_all(SNAPSHOT_MAGIC)?;
        out.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
        out.write_all(&self.layer.to_le_bytes())?;
        out.write_all(&self.width.to_le_bytes())?;
        out.write_all(&self.time.to_le_bytes())?;
        for w in &self.weights {
            out.write_all(&w.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(input: &mut R) -> io::Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "not a weight snapshot"));
        }
        let mut u32buf = [0u8; 4];
        let mut read_u32 = |input: &mut R| -> io::Result<u32> {
            input.read_exact(&mut u32buf)?;
            Ok(u32::from_le_bytes(u32buf))
        };
        let version = read_u32(input)?;
        if version != SNAPSHOT_VERSION {
            return Err(io::Error::new(io::ErrorKind::InvalidData, format!("unsupported snapshot version {version}")));
        }
        let layer = read_u32(input)?;
        let width = read_u32(input)?;
        let mut u64buf = [0u8; 8];
        input.read_exact(&mut u64buf)?;
        let time = u64::from_le_bytes(u64buf);
        let mut weights = Vec::with_capacity((width as usize).pow(2));
        for _ in 0..(width as usize).pow(2) {
            input.read_exact(&mut u64buf)?;
            weights.push(f64::from_le_bytes(u64buf));
        }
        Ok(Self { layer, width, time, weights })
    }

    /// CSV for inspection: a `#` header line, then one line per target row.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "# layer={} n={} time={} format-version={}", self.layer, self.width, self.time, SNAPSHOT_VERSION)?;
        let n = self.width as usize;
        for row in self.weights.chunks(n.max(1)) {
            let cells: Vec<String> = row.iter().map(|w| format!("{w:?}")).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }
}
