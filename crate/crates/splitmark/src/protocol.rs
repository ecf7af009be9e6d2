//! The split-learning session: paired client/server state machines
//! exchanging framed messages over a pluggable transport.
//!
//! A batch is one lockstep exchange, with no pipelining. Per topology:
//!
//! - **(a) label sharing** — client sends SMASHED then LABELS; the server
//!   computes the loss, answers GRAD (split-layer gradient) then LOSS.
//! - **(b) labels on server** — client sends SMASHED only; the server looks
//!   its labels up from the shared batch plan and answers GRAD then LOSS.
//!   No LABELS frame ever crosses the wire.
//! - **(c) labels on client** — client sends SMASHED; the server runs its
//!   layers and returns its output as SMASHED; the client finishes the model
//!   (the trailing softmax lives client-side), computes the loss locally and
//!   sends GRAD w.r.t. the server output; the server backpropagates and
//!   answers GRAD w.r.t. the split layer. Neither labels nor loss values
//!   cross the wire.
//!
//! Both halves apply one SGD step per batch. Because every layer executes
//! the same floating-point operations in the same order as in the monolithic
//! stack, and tensors round-trip the wire bit-exactly, split training is
//! bit-identical to monolithic training for any split index and topology.
//!
//! After the final END_EPOCH the server switches to inference mode: each
//! SMASHED is answered with the server-side scores as SMASHED. Closing the
//! transport between exchanges shuts the server down cleanly.

use std::thread::JoinHandle;

use crate::data::BatchPlan;
use crate::engine::{argmax_rows, Layer, LayerStack, Tensor};
use crate::error::{Error, Result};
use crate::transport::{
    inproc_pair, tcp_accept, tcp_listener, Tap, TappedTransport, TcpTransport, Transport,
    TransportKind,
};
use crate::wire::WireMessage;

/// The three classic SplitNN configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    /// (a): data and labels co-located on the client, labels shared with the
    /// server.
    LabelSharing,
    /// (b): data on the client, labels held by the server.
    LabelsOnServer,
    /// (c): data and labels on the client; no label sharing.
    LabelsOnClient,
}

impl Topology {
    pub fn letter(&self) -> char {
        match self {
            Topology::LabelSharing => 'a',
            Topology::LabelsOnServer => 'b',
            Topology::LabelsOnClient => 'c',
        }
    }

    /// Frames on the wire per training batch.
    pub fn frames_per_batch(&self) -> usize {
        match self {
            Topology::LabelSharing => 4,  // SMASHED, LABELS, GRAD, LOSS
            Topology::LabelsOnServer => 3, // SMASHED, GRAD, LOSS
            Topology::LabelsOnClient => 4, // SMASHED, SMASHED, GRAD, GRAD
        }
    }
}

impl std::str::FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a" | "label-sharing" => Ok(Topology::LabelSharing),
            "b" | "labels-on-server" => Ok(Topology::LabelsOnServer),
            "c" | "labels-on-client" => Ok(Topology::LabelsOnClient),
            other => Err(Error::InvalidArgument(format!(
                "unknown topology {other:?}; use a, b or c"
            ))),
        }
    }
}

/// Everything both parties agree on before a session starts.
#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub split_index: usize,
    pub topology: Topology,
    pub epochs: usize,
    pub batch_size: usize,
    /// Shuffle seed; under labels-on-server the server replays the batch
    /// plan from this seed to look up its labels.
    pub seed: u64,
    pub lr: f32,
}

/// Cuts a trained or fresh stack into client and server halves.
pub fn split_model(stack: LayerStack, k: usize) -> Result<(LayerStack, LayerStack)> {
    stack.split(k)
}

struct ServerEnd {
    stack: LayerStack,
    topology: Topology,
    lr: f32,
    epochs: usize,
    /// Topology (b): the server's own label store plus the plan parameters
    /// needed to replay the client's batch order.
    labels: Option<Vec<usize>>,
    batch_size: usize,
    seed: u64,
}

fn violation(expected: &str, got: &WireMessage) -> Error {
    Error::ProtocolViolation {
        expected: expected.to_string(),
        got: got.type_name().to_string(),
    }
}

fn run_server(mut end: ServerEnd, mut transport: Box<dyn Transport>) -> Result<LayerStack> {
    let mut epoch = 0usize;
    let mut batch_idx = 0usize;
    let mut plan: Option<BatchPlan> = match &end.labels {
        Some(labels) if end.epochs > 0 => Some(BatchPlan::for_epoch(
            labels.len(),
            end.batch_size,
            end.seed,
            0,
        )?),
        _ => None,
    };
    loop {
        let msg = match transport.recv() {
            Ok(m) => m,
            // Hang-up between exchanges is the shutdown signal.
            Err(Error::TransportClosed) => return Ok(end.stack),
            Err(e) => return Err(e),
        };
        let training = epoch < end.epochs;
        match msg {
            WireMessage::Smashed(x) if training => {
                match end.topology {
                    Topology::LabelSharing => {
                        let y = match transport.recv()? {
                            WireMessage::Labels(l) => {
                                l.iter().map(|&v| v as usize).collect::<Vec<_>>()
                            }
                            other => return Err(violation("LABELS", &other)),
                        };
                        let (loss, bundle) = end.stack.loss_and_backward(&x, &y)?;
                        transport.send(&WireMessage::Grad(bundle.input_grad.clone()))?;
                        transport.send(&WireMessage::Loss(loss))?;
                        end.stack.sgd_step(&bundle, end.lr)?;
                    }
                    Topology::LabelsOnServer => {
                        let labels = end.labels.as_ref().ok_or_else(|| {
                            Error::InvalidArgument(
                                "labels-on-server session started without labels".into(),
                            )
                        })?;
                        let plan_ref = plan.as_ref().expect("plan exists with labels");
                        let idx = plan_ref.batch_indices(batch_idx);
                        if idx.len() != x.batch() {
                            return Err(Error::ProtocolViolation {
                                expected: format!("batch of {}", idx.len()),
                                got: format!("batch of {}", x.batch()),
                            });
                        }
                        let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
                        let (loss, bundle) = end.stack.loss_and_backward(&x, &y)?;
                        transport.send(&WireMessage::Grad(bundle.input_grad.clone()))?;
                        transport.send(&WireMessage::Loss(loss))?;
                        end.stack.sgd_step(&bundle, end.lr)?;
                    }
                    Topology::LabelsOnClient => {
                        let trace = end.stack.forward_trace(&x)?;
                        transport.send(&WireMessage::Smashed(trace.output().clone()))?;
                        let g = match transport.recv()? {
                            WireMessage::Grad(g) => g,
                            other => return Err(violation("GRAD", &other)),
                        };
                        let bundle = end.stack.backward_from(&trace, g)?;
                        transport.send(&WireMessage::Grad(bundle.input_grad.clone()))?;
                        end.stack.sgd_step(&bundle, end.lr)?;
                    }
                }
                batch_idx += 1;
            }
            // Inference mode: answer scores for each smashed batch.
            WireMessage::Smashed(x) => {
                let scores = end.stack.forward(&x)?;
                transport.send(&WireMessage::Smashed(scores))?;
            }
            WireMessage::EndEpoch if training => {
                epoch += 1;
                batch_idx = 0;
                if epoch < end.epochs {
                    if let Some(labels) = &end.labels {
                        plan = Some(BatchPlan::for_epoch(
                            labels.len(),
                            end.batch_size,
                            end.seed,
                            epoch,
                        )?);
                    }
                }
            }
            other => {
                return Err(violation(
                    if training {
                        "SMASHED or END_EPOCH"
                    } else {
                        "SMASHED"
                    },
                    &other,
                ))
            }
        }
    }
}

/// A live split-learning session. The server half runs on its own thread,
/// reachable only through the transport; the client half drives batches.
pub struct SplitSession {
    client_stack: LayerStack,
    /// Topology (c): the trailing softmax stays with the client, which
    /// finishes the forward pass and computes the loss locally.
    tail: Option<LayerStack>,
    transport: Box<dyn Transport>,
    topology: Topology,
    lr: f32,
    epochs: usize,
    epochs_done: usize,
    split_index: usize,
    server: Option<JoinHandle<Result<LayerStack>>>,
}

impl SplitSession {
    /// Splits `stack` per the config, spawns the server half on a background
    /// thread connected by `kind`, and returns the client handle.
    ///
    /// `server_labels` seeds the server's label store and is required (and
    /// only meaningful) for [`Topology::LabelsOnServer`]. A `tap` wraps the
    /// client transport and observes every frame in transmission order.
    pub fn establish(
        stack: LayerStack,
        cfg: &SessionConfig,
        server_labels: Option<Vec<usize>>,
        kind: &TransportKind,
        tap: Option<Tap>,
    ) -> Result<SplitSession> {
        if cfg.epochs == 0 {
            return Err(Error::InvalidArgument("session needs at least one epoch".into()));
        }
        if !(cfg.lr > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                cfg.lr
            )));
        }
        if !matches!(stack.layers().last(), Some(Layer::SoftmaxOutput)) {
            return Err(Error::InvalidArgument(
                "training requires a softmax_output final layer".into(),
            ));
        }
        if cfg.topology == Topology::LabelsOnServer && server_labels.is_none() {
            return Err(Error::InvalidArgument(
                "labels-on-server topology needs the label store up front".into(),
            ));
        }

        let (client_stack, server_stack, tail) = match cfg.topology {
            Topology::LabelSharing | Topology::LabelsOnServer => {
                let (front, back) = stack.split(cfg.split_index)?;
                (front, back, None)
            }
            Topology::LabelsOnClient => {
                // The model ends at the client: peel the softmax off the back
                // so the server returns raw scores.
                let (front, back) = stack.split(cfg.split_index)?;
                if back.len() == 1 {
                    let empty = LayerStack::from_layers(back.input_shape().to_vec(), Vec::new())?;
                    (front, empty, Some(back))
                } else {
                    let cut = back.len() - 1;
                    let (mid, tail) = back.split(cut)?;
                    (front, mid, Some(tail))
                }
            }
        };

        let server_end = ServerEnd {
            stack: server_stack,
            topology: cfg.topology,
            lr: cfg.lr,
            epochs: cfg.epochs,
            labels: server_labels,
            batch_size: cfg.batch_size,
            seed: cfg.seed,
        };

        let (client_transport, server): (Box<dyn Transport>, JoinHandle<Result<LayerStack>>) =
            match kind {
                TransportKind::InProc => {
                    let (a, b) = inproc_pair();
                    let handle = std::thread::spawn(move || run_server(server_end, Box::new(b)));
                    (Box::new(a), handle)
                }
                TransportKind::Tcp { addr } => {
                    let (listener, local) = tcp_listener(addr.as_deref())?;
                    let handle = std::thread::spawn(move || {
                        let t = tcp_accept(&listener)?;
                        run_server(server_end, Box::new(t))
                    });
                    (Box::new(TcpTransport::connect(&local)?), handle)
                }
            };

        let transport: Box<dyn Transport> = match tap {
            Some(tap) => Box::new(TappedTransport::new(BoxedTransport(client_transport), tap)),
            None => client_transport,
        };

        Ok(SplitSession {
            client_stack,
            tail,
            transport,
            topology: cfg.topology,
            lr: cfg.lr,
            epochs: cfg.epochs,
            epochs_done: 0,
            split_index: cfg.split_index,
            server: Some(server),
        })
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn split_index(&self) -> usize {
        self.split_index
    }

    pub fn training_complete(&self) -> bool {
        self.epochs_done >= self.epochs
    }

    fn expect_grad(&mut self) -> Result<Tensor> {
        match self.transport.recv()? {
            WireMessage::Grad(g) => Ok(g),
            other => Err(violation("GRAD", &other)),
        }
    }

    fn expect_loss(&mut self) -> Result<f32> {
        match self.transport.recv()? {
            WireMessage::Loss(l) => Ok(l),
            other => Err(violation("LOSS", &other)),
        }
    }

    fn expect_smashed(&mut self) -> Result<Tensor> {
        match self.transport.recv()? {
            WireMessage::Smashed(t) => Ok(t),
            other => Err(violation("SMASHED", &other)),
        }
    }

    /// Runs one training batch through the split model and applies one SGD
    /// step on both halves. Under labels-on-server the `y` argument stays
    /// local and unused; the server derives the batch labels from the shared
    /// plan, so batches must be driven in [`BatchPlan`] order.
    pub fn train_batch(&mut self, x: &Tensor, y: &[usize]) -> Result<f32> {
        if self.training_complete() {
            return Err(Error::InvalidArgument(
                "all configured epochs already ran; the session now serves inference".into(),
            ));
        }
        let trace = self.client_stack.forward_trace(x)?;
        self.transport
            .send(&WireMessage::Smashed(trace.output().clone()))?;
        match self.topology {
            Topology::LabelSharing => {
                self.transport
                    .send(&WireMessage::Labels(y.iter().map(|&v| v as u32).collect()))?;
                let g = self.expect_grad()?;
                let loss = self.expect_loss()?;
                let bundle = self.client_stack.backward_from(&trace, g)?;
                self.client_stack.sgd_step(&bundle, self.lr)?;
                Ok(loss)
            }
            Topology::LabelsOnServer => {
                let g = self.expect_grad()?;
                let loss = self.expect_loss()?;
                let bundle = self.client_stack.backward_from(&trace, g)?;
                self.client_stack.sgd_step(&bundle, self.lr)?;
                Ok(loss)
            }
            Topology::LabelsOnClient => {
                let scores = self.expect_smashed()?;
                let tail = self.tail.as_ref().expect("topology c keeps the tail");
                let tail_trace = tail.forward_trace(&scores)?;
                let (loss, tail_bundle) = tail.loss_and_backward_traced(&tail_trace, y)?;
                self.transport
                    .send(&WireMessage::Grad(tail_bundle.input_grad.clone()))?;
                let g = self.expect_grad()?;
                let bundle = self.client_stack.backward_from(&trace, g)?;
                self.client_stack.sgd_step(&bundle, self.lr)?;
                Ok(loss)
            }
        }
    }

    /// Marks the end of an epoch on both sides.
    pub fn end_epoch(&mut self) -> Result<()> {
        if self.training_complete() {
            return Err(Error::InvalidArgument("all epochs already ended".into()));
        }
        self.transport.send(&WireMessage::EndEpoch)?;
        self.epochs_done += 1;
        Ok(())
    }

    /// Predicts labels through the live split model. Only available once all
    /// configured epochs have run. Matches `predict` on the reassembled
    /// stack bit-exactly.
    pub fn serve_inference(&mut self, x: &Tensor) -> Result<Vec<usize>> {
        if !self.training_complete() {
            return Err(Error::InvalidArgument(
                "inference only runs after training completes".into(),
            ));
        }
        let smashed = self.client_stack.forward(x)?;
        self.transport.send(&WireMessage::Smashed(smashed))?;
        let scores = self.expect_smashed()?;
        let scores = match &self.tail {
            Some(tail) => tail.forward(&scores)?,
            None => scores,
        };
        Ok(argmax_rows(&scores))
    }

    /// Shuts the session down and reassembles the full model from both
    /// halves.
    pub fn finish(self) -> Result<LayerStack> {
        let SplitSession {
            client_stack,
            tail,
            transport,
            server,
            ..
        } = self;
        drop(transport);
        let handle = server.expect("server thread handle");
        let server_stack = handle
            .join()
            .map_err(|_| Error::Internal("server thread panicked".into()))??;
        let joined = LayerStack::join(client_stack, server_stack)?;
        match tail {
            Some(tail) => LayerStack::join(joined, tail),
            None => Ok(joined),
        }
    }
}

/// Newtype so a boxed transport can sit inside `TappedTransport`.
struct BoxedTransport(Box<dyn Transport>);

impl Transport for BoxedTransport {
    fn send(&mut self, msg: &WireMessage) -> Result<()> {
        self.0.send(msg)
    }

    fn recv(&mut self) -> Result<WireMessage> {
        self.0.recv()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{batches, synth_dataset, BatchPlan, Dataset};
    use crate::engine::{LayerSpec, StackSpec};
    use crate::wire::{WireMessage, MSG_LABELS, MSG_LOSS};

    fn toy_spec(dim: usize, classes: usize) -> StackSpec {
        StackSpec::new(
            vec![1, dim],
            vec![
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    inputs: dim,
                    outputs: 8,
                },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    inputs: 8,
                    outputs: classes,
                },
                LayerSpec::Relu,
                LayerSpec::SoftmaxOutput,
            ],
        )
    }

    fn toy_data() -> Dataset {
        synth_dataset(8, 3, 6, 41).unwrap()
    }

    /// Independent oracle: plain monolithic training with the exact batch
    /// schedule the session uses.
    fn train_monolithic(
        spec: &StackSpec,
        init_seed: u64,
        ds: &Dataset,
        epochs: usize,
        batch_size: usize,
        lr: f32,
    ) -> (LayerStack, Vec<f32>) {
        let mut stack = LayerStack::init(spec, init_seed).unwrap();
        let mut losses = Vec::new();
        for epoch in 0..epochs {
            let plan = BatchPlan::for_epoch(ds.len(), batch_size, init_seed, epoch).unwrap();
            for (x, y) in batches(ds, &plan) {
                let (loss, bundle) = stack.loss_and_backward(&x, &y).unwrap();
                stack.sgd_step(&bundle, lr).unwrap();
                losses.push(loss);
            }
        }
        (stack, losses)
    }

    fn train_session(
        spec: &StackSpec,
        ds: &Dataset,
        cfg: &SessionConfig,
        kind: &TransportKind,
        tap: Option<Tap>,
    ) -> (LayerStack, Vec<f32>) {
        let stack = LayerStack::init(spec, cfg.seed).unwrap();
        let labels = (cfg.topology == Topology::LabelsOnServer).then(|| ds.labels.clone());
        let mut session = SplitSession::establish(stack, cfg, labels, kind, tap).unwrap();
        let mut losses = Vec::new();
        for epoch in 0..cfg.epochs {
            let plan = BatchPlan::for_epoch(ds.len(), cfg.batch_size, cfg.seed, epoch).unwrap();
            for (x, y) in batches(ds, &plan) {
                losses.push(session.train_batch(&x, &y).unwrap());
            }
            session.end_epoch().unwrap();
        }
        (session.finish().unwrap(), losses)
    }

    #[test]
    fn split_training_is_bit_identical_to_monolithic_for_every_k_and_topology() {
        let spec = toy_spec(6, 3);
        let ds = toy_data();
        let (oracle, oracle_losses) = train_monolithic(&spec, 77, &ds, 2, 5, 0.1);
        for topology in [
            Topology::LabelSharing,
            Topology::LabelsOnServer,
            Topology::LabelsOnClient,
        ] {
            for k in 1..spec.layers.len() {
                let cfg = SessionConfig {
                    split_index: k,
                    topology,
                    epochs: 2,
                    batch_size: 5,
                    seed: 77,
                    lr: 0.1,
                };
                let (trained, losses) =
                    train_session(&spec, &ds, &cfg, &TransportKind::InProc, None);
                assert_eq!(
                    trained, oracle,
                    "k={k} topology={} diverged from monolithic",
                    topology.letter()
                );
                assert_eq!(losses, oracle_losses, "k={k} topology={}", topology.letter());
            }
        }
    }

    #[test]
    fn tcp_transport_matches_inproc_bit_for_bit() {
        let spec = toy_spec(6, 3);
        let ds = toy_data();
        let cfg = SessionConfig {
            split_index: 3,
            topology: Topology::LabelsOnServer,
            epochs: 2,
            batch_size: 4,
            seed: 9,
            lr: 0.05,
        };
        let tap_inproc = Tap::new();
        let tap_tcp = Tap::new();
        let (a, la) = train_session(&spec, &ds, &cfg, &TransportKind::InProc, Some(tap_inproc.clone()));
        let (b, lb) = train_session(
            &spec,
            &ds,
            &cfg,
            &TransportKind::Tcp { addr: None },
            Some(tap_tcp.clone()),
        );
        assert_eq!(a, b);
        assert_eq!(la, lb);
        assert_eq!(tap_inproc.records(), tap_tcp.records());
    }

    #[test]
    fn transcripts_respect_topology_privacy() {
        let spec = toy_spec(6, 3);
        let ds = toy_data();
        for topology in [
            Topology::LabelSharing,
            Topology::LabelsOnServer,
            Topology::LabelsOnClient,
        ] {
            let tap = Tap::new();
            let cfg = SessionConfig {
                split_index: 2,
                topology,
                epochs: 1,
                batch_size: 6,
                seed: 5,
                lr: 0.1,
            };
            train_session(&spec, &ds, &cfg, &TransportKind::InProc, Some(tap.clone()));
            let records = tap.records();
            let plan = BatchPlan::for_epoch(ds.len(), 6, 5, 0).unwrap();
            let expected = plan.batch_count() * topology.frames_per_batch() + 1; // + END_EPOCH
            assert_eq!(records.len(), expected, "topology {}", topology.letter());

            let labels_frames = records
                .iter()
                .filter(|r| r.message.msg_type() == MSG_LABELS)
                .count();
            let loss_frames = records
                .iter()
                .filter(|r| r.message.msg_type() == MSG_LOSS)
                .count();
            match topology {
                Topology::LabelSharing => {
                    assert_eq!(labels_frames, plan.batch_count());
                }
                Topology::LabelsOnServer => {
                    assert_eq!(labels_frames, 0, "labels leaked under topology b");
                    assert_eq!(loss_frames, plan.batch_count());
                }
                Topology::LabelsOnClient => {
                    assert_eq!(labels_frames, 0, "labels leaked under topology c");
                    assert_eq!(loss_frames, 0, "loss leaked under topology c");
                }
            }
            // No raw inputs on the wire: every client-to-server smashed frame
            // is an activation at the split, not an input row.
            for r in &records {
                if let (Direction::ClientToServer, WireMessage::Smashed(t)) =
                    (r.direction, &r.message)
                {
                    assert_ne!(
                        t.shape()[1..].to_vec(),
                        vec![1, 6],
                        "raw input crossed the wire"
                    );
                }
            }
        }
    }

    use crate::transport::Direction;

    #[test]
    fn serve_inference_equals_predict_on_reassembled_stack() {
        let spec = toy_spec(6, 3);
        let ds = toy_data();
        let cfg = SessionConfig {
            split_index: 4,
            topology: Topology::LabelsOnClient,
            epochs: 1,
            batch_size: 8,
            seed: 3,
            lr: 0.1,
        };
        let stack = LayerStack::init(&spec, cfg.seed).unwrap();
        let mut session =
            SplitSession::establish(stack, &cfg, None, &TransportKind::InProc, None).unwrap();
        let plan = BatchPlan::for_epoch(ds.len(), 8, 3, 0).unwrap();
        for (x, y) in batches(&ds, &plan) {
            session.train_batch(&x, &y).unwrap();
        }
        session.end_epoch().unwrap();

        let x = ds.images.slice_rows(0, 10).unwrap();
        let via_session = session.serve_inference(&x).unwrap();
        let again = session.serve_inference(&x).unwrap();
        assert_eq!(via_session, again, "inference must be deterministic");
        let empty = ds.images.slice_rows(0, 0).unwrap();
        assert!(session.serve_inference(&empty).unwrap().is_empty());

        let full = session.finish().unwrap();
        assert_eq!(via_session, full.predict(&x).unwrap());
    }

    #[test]
    fn inference_before_training_completes_is_rejected() {
        let spec = toy_spec(6, 3);
        let cfg = SessionConfig {
            split_index: 2,
            topology: Topology::LabelsOnServer,
            epochs: 1,
            batch_size: 4,
            seed: 0,
            lr: 0.1,
        };
        let stack = LayerStack::init(&spec, 0).unwrap();
        let mut session =
            SplitSession::establish(stack, &cfg, Some(vec![0; 24]), &TransportKind::InProc, None)
                .unwrap();
        let x = Tensor::zeros(vec![2, 1, 6]);
        assert!(session.serve_inference(&x).is_err());
    }

    #[test]
    fn establish_rejects_bad_configs() {
        let spec = toy_spec(6, 3);
        let stack = LayerStack::init(&spec, 0).unwrap();
        let base = SessionConfig {
            split_index: 2,
            topology: Topology::LabelsOnServer,
            epochs: 1,
            batch_size: 4,
            seed: 0,
            lr: 0.1,
        };

        let mut cfg = base.clone();
        cfg.split_index = spec.layers.len();
        assert!(matches!(
            SplitSession::establish(stack.clone(), &cfg, Some(vec![0; 4]), &TransportKind::InProc, None),
            Err(Error::SplitOutOfRange { .. })
        ));

        // Labels-on-server without labels.
        assert!(SplitSession::establish(
            stack.clone(),
            &base,
            None,
            &TransportKind::InProc,
            None
        )
        .is_err());

        let mut cfg = base.clone();
        cfg.epochs = 0;
        assert!(SplitSession::establish(
            stack.clone(),
            &cfg,
            Some(vec![0; 4]),
            &TransportKind::InProc,
            None
        )
        .is_err());
    }
}
