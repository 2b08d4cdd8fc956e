use crate::error::{Error, Result};
use crate::nn::layer::{self, BackwardRule, LayerSpec, Params};
use crate::tensor::Tensor;

/// Index of a value flowing through the network: `0` is the network input,
/// `i + 1` is the output of node `i`.
pub type ValueId = usize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub spec: LayerSpec,
    pub inputs: Vec<ValueId>,
}

/// A fixed feed-forward graph of layers in topological order. The last node
/// is the network output.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_channels: usize,
    nodes: Vec<Node>,
    params: Vec<Params>,
}

/// Per-layer values recorded during one forward evaluation.
///
/// Immutable once built; any number of backward passes may share it.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    fingerprint: u64,
    values: Vec<Tensor>,
}

impl ForwardTrace {
    pub fn input(&self) -> &Tensor {
        &self.values[0]
    }

    pub fn output(&self) -> &Tensor {
        self.values.last().unwrap()
    }

    /// Output of node `i`.
    pub fn layer_output(&self, i: usize) -> &Tensor {
        &self.values[i + 1]
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.values[id]
    }

    pub fn num_layers(&self) -> usize {
        self.values.len() - 1
    }

    /// Identity of the network (topology and parameter bits) that recorded it.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }
}

/// Gradients of a scalar objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<Params>,
    pub input: Tensor,
}

impl Network {
    /// Build a network with zero parameters. Channel counts are checked
    /// statically; spatial extents are checked at evaluation time.
    pub fn new(input_channels: usize, nodes: Vec<Node>) -> Result<Network> {
        if nodes.is_empty() {
            return Err(Error::InvalidNetwork("network has no layers".into()));
        }
        let mut channels = vec![input_channels];
        for (i, node) in nodes.iter().enumerate() {
            if node.inputs.len() != node.spec.arity() {
                return Err(Error::InvalidNetwork(format!(
                    "layer {i} ({}) has {} inputs, needs {}",
                    node.spec.kind(),
                    node.inputs.len(),
                    node.spec.arity()
                )));
            }
            if let Some(&bad) = node.inputs.iter().find(|&&v| v > i) {
                return Err(Error::InvalidNetwork(format!(
                    "layer {i} reads value {bad}, which is not yet computed"
                )));
            }
            let c_in = channels[node.inputs[0]];
            let c_out = match node.spec {
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                } => {
                    if kernel % 2 == 0 || kernel == 0 {
                        return Err(Error::InvalidNetwork(format!("layer {i}: kernel {kernel} must be odd")));
                    }
                    if in_channels != c_in || in_channels == 0 || out_channels == 0 {
                        return Err(Error::InvalidNetwork(format!(
                            "layer {i}: conv expects {in_channels} channels, receives {c_in}"
                        )));
                    }
                    out_channels
                }
                LayerSpec::OutputHead { in_channels } => {
                    if in_channels != c_in {
                        return Err(Error::InvalidNetwork(format!(
                            "layer {i}: head expects {in_channels} channels, receives {c_in}"
                        )));
                    }
                    1
                }
                LayerSpec::Concat => c_in + channels[node.inputs[1]],
                _ => c_in,
            };
            channels.push(c_out);
        }
        let params = nodes.iter().map(|n| Params::zeros_for(&n.spec)).collect();
        Ok(Network {
            input_channels,
            nodes,
            params,
        })
    }

    /// A plain chain of layers, each reading the previous value.
    pub fn sequential(input_channels: usize, specs: &[LayerSpec]) -> Result<Network> {
        let nodes = specs
            .iter()
            .enumerate()
            .map(|(i, &spec)| Node { spec, inputs: vec![i] })
            .collect();
        Network::new(input_channels, nodes)
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn params(&self) -> &[Params] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Params] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Params::len).sum()
    }

    pub fn zero_grads(&self) -> Vec<Params> {
        self.nodes.iter().map(|n| Params::zeros_for(&n.spec)).collect()
    }

    /// Replace all parameters; shapes must match the layer specs.
    pub fn set_params(&mut self, params: Vec<Params>) -> Result<()> {
        if params.len() != self.nodes.len() {
            return Err(Error::InvalidNetwork(format!(
                "{} parameter blocks for {} layers",
                params.len(),
                self.nodes.len()
            )));
        }
        for (i, (p, n)) in params.iter().zip(&self.nodes).enumerate() {
            if (p.weight.len(), p.bias.len()) != n.spec.param_sizes() {
                return Err(Error::InvalidNetwork(format!("layer {i}: parameter sizes do not match")));
            }
        }
        self.params = params;
        Ok(())
    }

    /// FNV-1a over the topology and parameter bit patterns.
    pub fn fingerprint(&self) -> u64 {
        const PRIME: u64 = 0x100_0000_01b3;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |v: u64| {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(PRIME);
            }
        };
        eat(self.input_channels as u64);
        for (node, p) in self.nodes.iter().zip(&self.params) {
            eat(node.spec.code() as u64);
            if let Some((i, o, k)) = node.spec.conv_geometry() {
                eat(i as u64);
                eat(o as u64);
                eat(k as u64);
            }
            for &v in &node.inputs {
                eat(v as u64);
            }
            for v in p.iter() {
                eat(v.to_bits());
            }
        }
        h
    }

    fn evaluate(&self, input: &Tensor) -> Result<Vec<Tensor>> {
        match input.chw() {
            Some((c, _, _)) if c == self.input_channels => {}
            _ => {
                let expected = match input.chw() {
                    Some((_, h, w)) => vec![self.input_channels, h, w],
                    None => vec![self.input_channels, 0, 0],
                };
                return Err(Error::ShapeMismatch {
                    layer: 0,
                    kind: self.nodes[0].spec.kind(),
                    expected,
                    actual: input.shape().to_vec(),
                });
            }
        }
        let mut values = Vec::with_capacity(self.nodes.len() + 1);
        values.push(input.clone());
        for (i, (node, p)) in self.nodes.iter().zip(&self.params).enumerate() {
            let ins: Vec<&Tensor> = node.inputs.iter().map(|&v| &values[v]).collect();
            let out = layer::forward(&node.spec, p, &ins, i)?;
            values.push(out);
        }
        Ok(values)
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.evaluate(input)?.pop().unwrap())
    }

    /// Forward pass that also records every layer's output.
    pub fn forward_traced(&self, input: &Tensor) -> Result<(Tensor, ForwardTrace)> {
        let values = self.evaluate(input)?;
        let trace = ForwardTrace {
            fingerprint: self.fingerprint(),
            values,
        };
        Ok((trace.output().clone(), trace))
    }

    /// Re-evaluate each layer from the inputs stored in `trace` and compare
    /// bit patterns with the recorded outputs.
    pub fn replay_matches(&self, trace: &ForwardTrace) -> Result<bool> {
        self.check_trace(trace)?;
        for (i, (node, p)) in self.nodes.iter().zip(&self.params).enumerate() {
            let ins: Vec<&Tensor> = node.inputs.iter().map(|&v| trace.value(v)).collect();
            let out = layer::forward(&node.spec, p, &ins, i)?;
            let same = out.shape() == trace.layer_output(i).shape()
                && out
                    .data()
                    .iter()
                    .zip(trace.layer_output(i).data())
                    .all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                return Ok(false);
            }
        }
        Ok(true)
    }

    fn check_trace(&self, trace: &ForwardTrace) -> Result<()> {
        if trace.values.len() != self.nodes.len() + 1 {
            return Err(Error::TraceMismatch(format!(
                "trace has {} layer records, network has {} layers",
                trace.values.len() - 1,
                self.nodes.len()
            )));
        }
        if trace.fingerprint != self.fingerprint() {
            return Err(Error::TraceMismatch(
                "recorded by a network with different topology or parameters".into(),
            ));
        }
        Ok(())
    }

    fn backward(
        &self,
        trace: &ForwardTrace,
        seed: &Tensor,
        rule: BackwardRule,
        mut param_grads: Option<&mut [Params]>,
    ) -> Result<Tensor> {
        self.check_trace(trace)?;
        if seed.shape() != trace.output().shape() {
            return Err(Error::ShapeMismatch {
                layer: self.nodes.len() - 1,
                kind: self.nodes.last().unwrap().spec.kind(),
                expected: trace.output().shape().to_vec(),
                actual: seed.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len() + 1];
        grads[self.nodes.len()] = Some(seed.clone());
        for (i, node) in self.nodes.iter().enumerate().rev() {
            let Some(g) = grads[i + 1].take() else {
                continue;
            };
            let ins: Vec<&Tensor> = node.inputs.iter().map(|&v| trace.value(v)).collect();
            let pg = param_grads.as_deref_mut().map(|pg| &mut pg[i]);
            let pg = if self.params[i].is_empty() { None } else { pg };
            let gins = layer::backward(&node.spec, &self.params[i], &ins, &g, rule, pg);
            for (&v, gi) in node.inputs.iter().zip(gins) {
                match &mut grads[v] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(gi.data()) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(gi),
                }
            }
        }
        Ok(grads[0].take().unwrap_or_else(|| Tensor::zeros(trace.input().shape())))
    }

    /// Gradients of a scalar loss with respect to every parameter and the
    /// input, given `loss_grad` = dLoss/dOutput.
    pub fn backward_train(&self, trace: &ForwardTrace, loss_grad: &Tensor) -> Result<Gradients> {
        let mut params = self.zero_grads();
        let input = self.backward(trace, loss_grad, BackwardRule::Train, Some(&mut params))?;
        Ok(Gradients { params, input })
    }

    /// Like [`Network::backward_train`] but accumulates parameter gradients
    /// into `acc` and skips allocating a fresh set.
    pub fn accumulate_train_grads(&self, trace: &ForwardTrace, loss_grad: &Tensor, acc: &mut [Params]) -> Result<()> {
        self.backward(trace, loss_grad, BackwardRule::Train, Some(acc))?;
        Ok(())
    }

    /// Guided backward pass from `seed_grad` at the output to an input-shaped
    /// map. At ReLUs the signal passes only where both the recorded forward
    /// input and the incoming backward value are strictly positive.
    pub fn backward_guided(&self, trace: &ForwardTrace, seed_grad: &Tensor) -> Result<Tensor> {
        self.backward(trace, seed_grad, BackwardRule::Guided, None)
    }
}
