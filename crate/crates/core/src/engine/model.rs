use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ops::{self, Geom};
use super::optim::AdamState;
use super::{EngineError, Tensor};
use crate::graph::{LayerKind, LayerSpec, ModelGraph, NodeId};

pub const BN_MOMENTUM: f64 = 0.99;
pub const BN_EPSILON: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Node positions and shapes resolved once per graph.
#[derive(Debug, Clone)]
struct Plan {
    order: Vec<usize>,
    inputs: Vec<Vec<usize>>,
    /// Per-sample output dims.
    dims: Vec<Vec<usize>>,
    input: usize,
    sink: usize,
    logits: usize,
    /// Index of the node's first trainable tensor in the flat slot list.
    first_slot: Vec<usize>,
    /// `(node position, tensor index)` for every trainable tensor.
    slots: Vec<(usize, usize)>,
}

impl Plan {
    fn new(graph: &ModelGraph) -> Self {
        let pos_of: BTreeMap<NodeId, usize> =
            graph.nodes().iter().enumerate().map(|(i, n)| (n.id, i)).collect();
        let order = graph.topo_order().iter().map(|id| pos_of[id]).collect();
        let inputs = graph
            .nodes()
            .iter()
            .map(|n| graph.inputs_of(n.id).iter().map(|id| pos_of[id]).collect())
            .collect::<Vec<Vec<usize>>>();
        let dims = graph
            .nodes()
            .iter()
            .map(|n| graph.shapes()[&n.id].dims().to_vec())
            .collect();
        let sink = pos_of[&graph.output_node().id];
        let mut first_slot = Vec::with_capacity(graph.nodes().len());
        let mut slots = Vec::new();
        for (pos, n) in graph.nodes().iter().enumerate() {
            first_slot.push(slots.len());
            slots.extend((0..trainable_tensors(n.layer.kind())).map(|t| (pos, t)));
        }
        Self {
            order,
            logits: inputs[sink][0],
            inputs,
            dims,
            input: pos_of[&graph.input_node().id],
            sink,
            first_slot,
            slots,
        }
    }
}

fn trainable_tensors(kind: LayerKind) -> usize {
    match kind {
        LayerKind::Conv1D | LayerKind::Conv2D | LayerKind::Dense | LayerKind::BatchNorm => 2,
        LayerKind::SeparableConv1D => 3,
        _ => 0,
    }
}

/// `[h, w, c]` view of a per-sample spatial shape.
fn hwc(dims: &[usize]) -> [usize; 3] {
    match *dims {
        [l, c] => [1, l, c],
        [h, w, c] => [h, w, c],
        _ => unreachable!("spatial layers have rank 2 or 3 by shape inference"),
    }
}

fn batched(n: usize, dims: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(dims.len() + 1);
    s.push(n);
    s.extend_from_slice(dims);
    s
}

#[derive(Debug, Clone)]
enum Cache {
    None,
    BatchStats {
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        mean: Vec<f64>,
        var: Vec<f64>,
    },
    /// Eval-mode batch norm scale `gamma / sqrt(var + eps)`.
    Scale(Vec<f64>),
    /// Scaled dropout mask.
    Mask(Vec<f64>),
    Argmax(Vec<u32>),
    /// Depthwise output feeding the pointwise stage.
    Depthwise(Vec<f64>),
}

/// Activations and layer caches of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    mode: Mode,
    values: Vec<Option<Tensor>>,
    caches: Vec<Cache>,
}

impl Trace {
    pub fn mode(&self) -> Mode {
        self.mode
    }
}

/// Gradients of the mean loss, in trainable-slot order, plus the gradient
/// with respect to the scaled input batch.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<Tensor>,
    pub input: Tensor,
}

impl Gradients {
    pub fn global_norm(&self) -> f64 {
        self.params.iter().map(Tensor::sum_squares).sum::<f64>().sqrt()
    }
}

/// A graph bound to parameters and optimizer state.
#[derive(Debug, Clone)]
pub struct ModelInstance {
    graph: ModelGraph,
    plan: Plan,
    /// Per node position: trainable tensors first, then moving statistics.
    params: Vec<Vec<Tensor>>,
    adam: AdamState,
    epoch: usize,
}

impl ModelInstance {
    /// Glorot-uniform weights, zero biases, unit gamma, zero beta and
    /// moving statistics `(0, 1)`.
    pub fn init(graph: ModelGraph, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plan = Plan::new(&graph);
        let mut params = Vec::with_capacity(graph.nodes().len());
        for (pos, node) in graph.nodes().iter().enumerate() {
            let in_dims = plan.inputs[pos].first().map(|&i| plan.dims[i].as_slice()).unwrap_or(&[]);
            params.push(init_layer(&node.layer, in_dims, &mut rng));
        }
        let adam = AdamState::for_shapes(plan.slots.iter().map(|&(p, t)| params[p][t].shape()));
        Self {
            graph,
            plan,
            params,
            adam,
            epoch: 0,
        }
    }

    pub(crate) fn from_state(
        graph: ModelGraph,
        params: Vec<Vec<Tensor>>,
        adam: AdamState,
        epoch: usize,
    ) -> Result<Self, EngineError> {
        let fresh = Self::init(graph, 0);
        let shapes_match = |a: &[Tensor], b: &[Tensor]| {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.shape() == y.shape())
        };
        let ok = params.len() == fresh.params.len()
            && params.iter().zip(&fresh.params).all(|(a, b)| shapes_match(a, b))
            && shapes_match(&adam.m, &fresh.adam.m)
            && shapes_match(&adam.v, &fresh.adam.v);
        if !ok {
            return Err(EngineError::Checkpoint(
                "parameter tensors do not match the graph".into(),
            ));
        }
        Ok(Self {
            params,
            adam,
            epoch,
            ..fresh
        })
    }

    pub fn graph(&self) -> &ModelGraph {
        &self.graph
    }

    /// Completed training epochs; drives the learning-rate schedule.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub(crate) fn set_epoch(&mut self, epoch: usize) {
        self.epoch = epoch;
    }

    pub fn optimizer(&self) -> &AdamState {
        &self.adam
    }

    /// All parameter tensors per node, in graph node order.
    pub fn layer_params(&self) -> &[Vec<Tensor>] {
        &self.params
    }

    /// Parameter tensors of node `id`.
    pub fn params_of(&self, id: NodeId) -> Option<&[Tensor]> {
        let pos = self.graph.nodes().iter().position(|n| n.id == id)?;
        Some(&self.params[pos])
    }

    pub fn num_trainable_tensors(&self) -> usize {
        self.plan.slots.len()
    }

    pub fn trainable(&self, slot: usize) -> &Tensor {
        let (p, t) = self.plan.slots[slot];
        &self.params[p][t]
    }

    pub fn trainable_mut(&mut self, slot: usize) -> &mut Tensor {
        let (p, t) = self.plan.slots[slot];
        &mut self.params[p][t]
    }

    /// Node id owning trainable `slot`.
    pub fn slot_owner(&self, slot: usize) -> NodeId {
        self.graph.nodes()[self.plan.slots[slot].0].id
    }

    fn check_batch(&self, batch: &Tensor) -> Result<usize, EngineError> {
        let want = self.graph.input_len();
        match batch.shape() {
            [n, len] if *len == want => Ok(*n),
            found => Err(EngineError::ShapeMismatch {
                expected: vec![batch.rows(), want],
                found: found.to_vec(),
            }),
        }
    }

    /// Evaluates every node without touching the model. Dropout draws from
    /// `rng` in Train mode only.
    pub fn run(&self, batch: &Tensor, mode: Mode, rng: &mut ChaCha8Rng) -> Result<Trace, EngineError> {
        let n = self.check_batch(batch)?;
        let count = self.graph.nodes().len();
        let mut values: Vec<Option<Tensor>> = vec![None; count];
        let mut caches = vec![Cache::None; count];
        for &pos in &self.plan.order {
            let ins: Vec<&Tensor> = self.plan.inputs[pos]
                .iter()
                .map(|&i| values[i].as_ref().expect("topological order"))
                .collect();
            let (out, cache) = self.forward_node(pos, n, batch, &ins, mode, rng);
            values[pos] = Some(out);
            caches[pos] = cache;
        }
        Ok(Trace {
            mode,
            values,
            caches,
        })
    }

    /// Output of node `id` recorded in `trace`.
    pub fn node_output<'a>(&self, trace: &'a Trace, id: NodeId) -> Option<&'a Tensor> {
        let pos = self.graph.nodes().iter().position(|n| n.id == id)?;
        trace.values[pos].as_ref()
    }

    /// Class probabilities from a trace.
    pub fn probabilities<'a>(&self, trace: &'a Trace) -> &'a Tensor {
        trace.values[self.plan.sink].as_ref().expect("sink evaluated")
    }

    /// Eval-mode probabilities.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor, EngineError> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut trace = self.run(batch, Mode::Eval, &mut rng)?;
        Ok(trace.values[self.plan.sink].take().expect("sink evaluated"))
    }

    /// Forward pass returning probabilities; Train mode folds the batch
    /// statistics into the moving averages.
    pub fn forward(&mut self, batch: &Tensor, mode: Mode, seed: u64) -> Result<Tensor, EngineError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trace = self.run(batch, mode, &mut rng)?;
        self.apply_batch_stats(&trace);
        Ok(trace.values[self.plan.sink].take().expect("sink evaluated"))
    }

    /// Moves BatchNorm moving statistics toward the trace's batch statistics.
    pub fn apply_batch_stats(&mut self, trace: &Trace) {
        for (pos, cache) in trace.caches.iter().enumerate() {
            if let Cache::BatchStats { mean, var, .. } = cache {
                let p = &mut self.params[pos];
                for (mm, bm) in p[2].data_mut().iter_mut().zip(mean) {
                    *mm = BN_MOMENTUM * *mm + (1.0 - BN_MOMENTUM) * bm;
                }
                for (mv, bv) in p[3].data_mut().iter_mut().zip(var) {
                    *mv = BN_MOMENTUM * *mv + (1.0 - BN_MOMENTUM) * bv;
                }
            }
        }
    }

    /// Mean cross-entropy of the traced batch and its gradients.
    pub fn backward(&self, trace: &Trace, labels: &[usize]) -> Result<(f64, Gradients), EngineError> {
        let probs = self.probabilities(trace);
        let n = probs.rows();
        let classes = self.graph.num_classes();
        if labels.len() != n {
            return Err(EngineError::ShapeMismatch {
                expected: vec![n],
                found: vec![labels.len()],
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(EngineError::LabelOutOfRange { label, classes });
        }
        let logits = trace.values[self.plan.logits].as_ref().expect("logits evaluated");
        let mut loss = 0.0;
        let mut dlogits = probs.data().to_vec();
        for (i, &y) in labels.iter().enumerate() {
            let z = logits.row(i);
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - z[y];
            dlogits[i * classes + y] -= 1.0;
        }
        let inv_n = 1.0 / n as f64;
        dlogits.iter_mut().for_each(|g| *g *= inv_n);

        let count = self.graph.nodes().len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; count];
        grads[self.plan.logits] = Some(dlogits);
        let mut param_grads: Vec<Option<Tensor>> = vec![None; self.plan.slots.len()];
        let mut input_grad = Tensor::zeros(&[n, self.graph.input_len()]);

        for &pos in self.plan.order.iter().rev() {
            if pos == self.plan.sink {
                continue;
            }
            let Some(dy) = grads[pos].take() else { continue };
            let ins: Vec<&Tensor> = self.plan.inputs[pos]
                .iter()
                .map(|&i| trace.values[i].as_ref().expect("evaluated"))
                .collect();
            let out = trace.values[pos].as_ref().expect("evaluated");
            if pos == self.plan.input {
                let width = self.graph.input_len();
                let block = dy.len() / n;
                for (dst, src) in input_grad.data_mut().chunks_exact_mut(width).zip(dy.chunks_exact(block)) {
                    dst.copy_from_slice(&src[..width]);
                }
                continue;
            }
            let (dins, dparams) = self.backward_node(pos, n, &ins, out, &trace.caches[pos], &dy);
            for (&src, d) in self.plan.inputs[pos].iter().zip(dins) {
                match &mut grads[src] {
                    Some(acc) => acc.iter_mut().zip(&d).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(d),
                }
            }
            let first = self.plan.first_slot[pos];
            for (t, d) in dparams.into_iter().enumerate() {
                let shape = self.params[pos][t].shape();
                param_grads[first + t] = Some(Tensor::from_vec(shape, d));
            }
        }
        let params = param_grads
            .into_iter()
            .enumerate()
            .map(|(slot, g)| g.unwrap_or_else(|| Tensor::zeros(self.trainable(slot).shape())))
            .collect();
        Ok((loss * inv_n, Gradients { params, input: input_grad }))
    }

    /// Loss and gradients on one batch; `seed` drives dropout masks.
    pub fn loss_and_grads(
        &self,
        batch: &Tensor,
        labels: &[usize],
        mode: Mode,
        seed: u64,
    ) -> Result<(f64, Gradients), EngineError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trace = self.run(batch, mode, &mut rng)?;
        self.backward(&trace, labels)
    }

    pub fn adam_step(&mut self, grads: &Gradients, lr: f64) {
        let counts = self.graph.nodes().iter().map(|n| trainable_tensors(n.layer.kind()));
        let params = self
            .params
            .iter_mut()
            .zip(counts)
            .flat_map(|(p, k)| p.iter_mut().take(k));
        self.adam.update(params, &grads.params, lr);
    }

    /// One Train-mode step: forward, backward, moving-statistics update and
    /// Adam. Returns the batch loss.
    pub fn train_step(
        &mut self,
        batch: &Tensor,
        labels: &[usize],
        lr: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<f64, EngineError> {
        let trace = self.run(batch, Mode::Train, rng)?;
        let (loss, grads) = self.backward(&trace, labels)?;
        self.apply_batch_stats(&trace);
        self.adam_step(&grads, lr);
        Ok(loss)
    }

    fn forward_node(
        &self,
        pos: usize,
        n: usize,
        batch: &Tensor,
        ins: &[&Tensor],
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> (Tensor, Cache) {
        let dims = &self.plan.dims[pos];
        let shape = batched(n, dims);
        let p = &self.params[pos];
        let in_dims = |k: usize| &self.plan.dims[self.plan.inputs[pos][k]];
        let x = || ins[0].data();
        let done = |data: Vec<f64>| (Tensor::from_vec(&shape, data), Cache::None);
        match self.graph.nodes()[pos].layer {
            LayerSpec::Input { reshape, .. } => match reshape {
                None => done(batch.data().to_vec()),
                Some(_) => {
                    let width = batch.len() / n.max(1);
                    let block: usize = dims.iter().product();
                    let mut out = vec![0.0; n * block];
                    for (dst, src) in out.chunks_exact_mut(block).zip(batch.data().chunks_exact(width)) {
                        dst[..width].copy_from_slice(src);
                    }
                    done(out)
                }
            },
            LayerSpec::Conv1D {
                kernel_size,
                filters,
                stride,
            } => {
                let g = Geom::new(n, hwc(in_dims(0)), [1, kernel_size], [1, stride]);
                done(ops::conv_forward(&g, filters, x(), p[0].data(), p[1].data()))
            }
            LayerSpec::Conv2D {
                kernel_size,
                filters,
                stride,
            } => {
                let g = Geom::new(n, hwc(in_dims(0)), [kernel_size; 2], [stride; 2]);
                done(ops::conv_forward(&g, filters, x(), p[0].data(), p[1].data()))
            }
            LayerSpec::SeparableConv1D {
                kernel_size,
                filters,
                stride,
            } => {
                let g = Geom::new(n, hwc(in_dims(0)), [1, kernel_size], [1, stride]);
                let mid = ops::depthwise_forward(&g, x(), p[0].data());
                let rows = mid.len() / g.c;
                let y = ops::dense_forward(rows, g.c, filters, &mid, p[1].data(), p[2].data());
                (Tensor::from_vec(&shape, y), Cache::Depthwise(mid))
            }
            LayerSpec::Dense { units } => {
                let k = in_dims(0)[0];
                done(ops::dense_forward(n, k, units, x(), p[0].data(), p[1].data()))
            }
            LayerSpec::BatchNorm => {
                let c = *dims.last().expect("rank >= 1");
                match mode {
                    Mode::Train => {
                        let bn = ops::bn_train_forward(c, x(), p[0].data(), p[1].data(), BN_EPSILON);
                        let cache = Cache::BatchStats {
                            xhat: bn.xhat,
                            inv_std: bn.inv_std,
                            mean: bn.mean,
                            var: bn.var,
                        };
                        (Tensor::from_vec(&shape, bn.y), cache)
                    }
                    Mode::Eval => {
                        let stats = [p[0].data(), p[1].data(), p[2].data(), p[3].data()];
                        let (y, scale) = ops::bn_eval_forward(c, x(), stats, BN_EPSILON);
                        (Tensor::from_vec(&shape, y), Cache::Scale(scale))
                    }
                }
            }
            LayerSpec::Dropout { rate } => {
                if mode == Mode::Eval || rate == 0.0 {
                    return done(x().to_vec());
                }
                let keep = 1.0 - rate;
                let mask: Vec<f64> = (0..ins[0].len())
                    .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                let y = x().iter().zip(&mask).map(|(a, m)| a * m).collect();
                (Tensor::from_vec(&shape, y), Cache::Mask(mask))
            }
            LayerSpec::ReLU => done(x().iter().map(|&v| v.max(0.0)).collect()),
            LayerSpec::ELU => done(x().iter().map(|&v| if v > 0.0 { v } else { v.exp_m1() }).collect()),
            LayerSpec::MaxPool1D { pool_size, stride } | LayerSpec::MaxPool2D { pool_size, stride } => {
                let g = self.pool_geom(pos, n, pool_size, stride);
                let (y, arg) = ops::max_pool_forward(&g, x());
                (Tensor::from_vec(&shape, y), Cache::Argmax(arg))
            }
            LayerSpec::AvgPool1D { pool_size, stride } | LayerSpec::AvgPool2D { pool_size, stride } => {
                let g = self.pool_geom(pos, n, pool_size, stride);
                done(ops::avg_pool_forward(&g, x()))
            }
            LayerSpec::Add => {
                let mut y = x().to_vec();
                for other in &ins[1..] {
                    y.iter_mut().zip(other.data()).for_each(|(a, b)| *a += b);
                }
                done(y)
            }
            LayerSpec::Concat => {
                let c_out = *dims.last().expect("rank >= 1");
                let rows = n * dims.iter().product::<usize>() / c_out;
                let mut y = vec![0.0; n * dims.iter().product::<usize>()];
                let mut offset = 0;
                for t in ins {
                    let c = t.len() / rows;
                    for (dst, src) in y.chunks_exact_mut(c_out).zip(t.data().chunks_exact(c)) {
                        dst[offset..offset + c].copy_from_slice(src);
                    }
                    offset += c;
                }
                done(y)
            }
            LayerSpec::Flatten | LayerSpec::Identity => done(x().to_vec()),
            LayerSpec::GlobalAvgPool => {
                let c = dims[0];
                let spatial = ins[0].len() / (n * c);
                let mut y = vec![0.0; n * c];
                for (yr, xs) in y.chunks_exact_mut(c).zip(x().chunks_exact(spatial * c)) {
                    for r in xs.chunks_exact(c) {
                        yr.iter_mut().zip(r).for_each(|(a, b)| *a += b);
                    }
                    yr.iter_mut().for_each(|a| *a /= spatial as f64);
                }
                done(y)
            }
            LayerSpec::Softmax => {
                let c = dims[0];
                let mut y = x().to_vec();
                for r in y.chunks_exact_mut(c) {
                    let max = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    r.iter_mut().for_each(|v| *v = (*v - max).exp());
                    let s: f64 = r.iter().sum();
                    r.iter_mut().for_each(|v| *v /= s);
                }
                done(y)
            }
            LayerSpec::Shift => {
                let [_, l, c] = hwc(dims);
                let mut y = vec![0.0; ins[0].len()];
                for (yr, xr) in y.chunks_exact_mut(l * c).zip(x().chunks_exact(l * c)) {
                    yr[..(l - 1) * c].copy_from_slice(&xr[c..]);
                }
                done(y)
            }
        }
    }

    fn pool_geom(&self, pos: usize, n: usize, pool_size: usize, stride: usize) -> Geom {
        let in_dims = &self.plan.dims[self.plan.inputs[pos][0]];
        if in_dims.len() == 2 {
            Geom::new(n, hwc(in_dims), [1, pool_size], [1, stride])
        } else {
            Geom::new(n, hwc(in_dims), [pool_size; 2], [stride; 2])
        }
    }

    /// Returns gradients for each input (slot order) and each trainable tensor.
    fn backward_node(
        &self,
        pos: usize,
        n: usize,
        ins: &[&Tensor],
        out: &Tensor,
        cache: &Cache,
        dy: &[f64],
    ) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let p = &self.params[pos];
        let dims = &self.plan.dims[pos];
        let in_dims = |k: usize| &self.plan.dims[self.plan.inputs[pos][k]];
        let x = || ins[0].data();
        let through = |d: Vec<f64>| (vec![d], Vec::new());
        match self.graph.nodes()[pos].layer {
            LayerSpec::Input { .. } | LayerSpec::Softmax => unreachable!("handled by caller"),
            LayerSpec::Conv1D {
                kernel_size,
                filters,
                stride,
            } => {
                let g = Geom::new(n, hwc(in_dims(0)), [1, kernel_size], [1, stride]);
                let (dx, dw, db) = ops::conv_backward(&g, filters, x(), p[0].data(), dy);
                (vec![dx], vec![dw, db])
            }
            LayerSpec::Conv2D {
                kernel_size,
                filters,
                stride,
            } => {
                let g = Geom::new(n, hwc(in_dims(0)), [kernel_size; 2], [stride; 2]);
                let (dx, dw, db) = ops::conv_backward(&g, filters, x(), p[0].data(), dy);
                (vec![dx], vec![dw, db])
            }
            LayerSpec::SeparableConv1D {
                kernel_size,
                filters,
                stride,
            } => {
                let Cache::Depthwise(mid) = cache else { unreachable!() };
                let g = Geom::new(n, hwc(in_dims(0)), [1, kernel_size], [1, stride]);
                let (dmid, dpw, db) = ops::dense_backward(g.c, filters, mid, p[1].data(), dy);
                let (dx, ddw) = ops::depthwise_backward(&g, x(), p[0].data(), &dmid);
                (vec![dx], vec![ddw, dpw, db])
            }
            LayerSpec::Dense { units } => {
                let (dx, dw, db) = ops::dense_backward(in_dims(0)[0], units, x(), p[0].data(), dy);
                (vec![dx], vec![dw, db])
            }
            LayerSpec::BatchNorm => {
                let c = *dims.last().expect("rank >= 1");
                match cache {
                    Cache::BatchStats { xhat, inv_std, .. } => {
                        let (dx, dg, db) = ops::bn_train_backward(c, xhat, inv_std, p[0].data(), dy);
                        (vec![dx], vec![dg, db])
                    }
                    Cache::Scale(scale) => {
                        let (mean, var) = (p[2].data(), p[3].data());
                        let mut dx = vec![0.0; dy.len()];
                        let mut dg = vec![0.0; c];
                        let mut db = vec![0.0; c];
                        for ((gr, xr), dr) in dy.chunks_exact(c).zip(x().chunks_exact(c)).zip(dx.chunks_exact_mut(c)) {
                            for ci in 0..c {
                                dr[ci] = gr[ci] * scale[ci];
                                dg[ci] += gr[ci] * (xr[ci] - mean[ci]) / (var[ci] + BN_EPSILON).sqrt();
                                db[ci] += gr[ci];
                            }
                        }
                        (vec![dx], vec![dg, db])
                    }
                    _ => unreachable!(),
                }
            }
            LayerSpec::Dropout { .. } => match cache {
                Cache::Mask(mask) => through(dy.iter().zip(mask).map(|(g, m)| g * m).collect()),
                _ => through(dy.to_vec()),
            },
            LayerSpec::ReLU => through(
                dy.iter()
                    .zip(x())
                    .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
                    .collect(),
            ),
            LayerSpec::ELU => through(
                dy.iter()
                    .zip(x())
                    .zip(out.data())
                    .map(|((&g, &v), &y)| if v > 0.0 { g } else { g * (y + 1.0) })
                    .collect(),
            ),
            LayerSpec::MaxPool1D { .. } | LayerSpec::MaxPool2D { .. } => {
                let Cache::Argmax(arg) = cache else { unreachable!() };
                through(ops::max_pool_backward(ins[0].len(), arg, dy))
            }
            LayerSpec::AvgPool1D { pool_size, stride } | LayerSpec::AvgPool2D { pool_size, stride } => {
                let g = self.pool_geom(pos, n, pool_size, stride);
                through(ops::avg_pool_backward(&g, ins[0].len(), dy))
            }
            LayerSpec::Add => (vec![dy.to_vec(); ins.len()], Vec::new()),
            LayerSpec::Concat => {
                let c_out = *dims.last().expect("rank >= 1");
                let rows = dy.len() / c_out;
                let mut offset = 0;
                let mut dins = Vec::with_capacity(ins.len());
                for t in ins {
                    let c = t.len() / rows;
                    let mut d = vec![0.0; t.len()];
                    for (dst, src) in d.chunks_exact_mut(c).zip(dy.chunks_exact(c_out)) {
                        dst.copy_from_slice(&src[offset..offset + c]);
                    }
                    offset += c;
                    dins.push(d);
                }
                (dins, Vec::new())
            }
            LayerSpec::Flatten | LayerSpec::Identity => through(dy.to_vec()),
            LayerSpec::GlobalAvgPool => {
                let c = dims[0];
                let spatial = ins[0].len() / (n * c);
                let inv = 1.0 / spatial as f64;
                let mut dx = vec![0.0; ins[0].len()];
                for (dxs, gr) in dx.chunks_exact_mut(spatial * c).zip(dy.chunks_exact(c)) {
                    for r in dxs.chunks_exact_mut(c) {
                        r.iter_mut().zip(gr).for_each(|(a, g)| *a = g * inv);
                    }
                }
                through(dx)
            }
            LayerSpec::Shift => {
                let [_, l, c] = hwc(dims);
                let mut dx = vec![0.0; dy.len()];
                for (dr, gr) in dx.chunks_exact_mut(l * c).zip(dy.chunks_exact(l * c)) {
                    dr[c..].copy_from_slice(&gr[..(l - 1) * c]);
                }
                through(dx)
            }
        }
    }
}

fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let len = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| rng.gen_range(-limit..limit)).collect())
}

fn init_layer(layer: &LayerSpec, in_dims: &[usize], rng: &mut ChaCha8Rng) -> Vec<Tensor> {
    let c = in_dims.last().copied().unwrap_or(0);
    match *layer {
        LayerSpec::Conv1D {
            kernel_size: k,
            filters: f,
            ..
        } => vec![glorot(&[k, c, f], k * c, k * f, rng), Tensor::zeros(&[f])],
        LayerSpec::Conv2D {
            kernel_size: k,
            filters: f,
            ..
        } => vec![glorot(&[k, k, c, f], k * k * c, k * k * f, rng), Tensor::zeros(&[f])],
        LayerSpec::SeparableConv1D {
            kernel_size: k,
            filters: f,
            ..
        } => vec![
            glorot(&[k, c], k * c, k, rng),
            glorot(&[c, f], c, f, rng),
            Tensor::zeros(&[f]),
        ],
        LayerSpec::Dense { units } => vec![glorot(&[c, units], c, units, rng), Tensor::zeros(&[units])],
        LayerSpec::BatchNorm => vec![
            Tensor::filled(&[c], 1.0),
            Tensor::zeros(&[c]),
            Tensor::zeros(&[c]),
            Tensor::filled(&[c], 1.0),
        ],
        _ => Vec::new(),
    }
}
