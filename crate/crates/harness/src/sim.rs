//! Discrete-event simulation of the sensor network.
//!
//! Virtual time advances in protocol rounds. In round 0 every node classifies
//! its window and sends its ClassVector. In round 1 the fusion center runs
//! ClassFuse, scores the entropy and, for each sample above the threshold,
//! sends a frame request to every node. Nodes answer in round 2 with their
//! CompressedFrame, and in round 3 the fusion center reconstructs and runs
//! FullFuse. Nodes keep their window buffered until the decision arrives.
//! Within a round, events are ordered by sample, then node.

use std::collections::VecDeque;

use bwnet_core::exit::{logprob_entropy, InferenceTrace, TraceEntry};
use bwnet_core::{relative_bandwidth, DistributedModel, EpochedDataset, ExitPolicy, Payload};
use bwnet_tensor::{Session, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const BYTES_PER_SCALAR: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub round: u32,
    pub sample: usize,
    pub node: usize,
    pub payload: Payload,
    pub scalars: usize,
    pub bytes: usize,
}

/// Node-to-fusion-center traffic, in delivery order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MessageLog {
    pub messages: Vec<Message>,
    /// Frame requests sent by the fusion center (control traffic, not
    /// counted as payload).
    pub requests: usize,
}

impl MessageLog {
    pub fn count(&self, payload: Payload) -> usize {
        self.messages.iter().filter(|m| m.payload == payload).count()
    }

    pub fn total_scalars(&self, payload: Payload) -> usize {
        self.messages
            .iter()
            .filter(|m| m.payload == payload)
            .map(|m| m.scalars)
            .sum()
    }

    pub fn total_bytes(&self) -> usize {
        self.messages.iter().map(|m| m.bytes).sum()
    }

    /// Mean scalars sent per node per sample over the window length.
    pub fn relative_bandwidth(&self, samples: usize, nodes: usize, window_len: usize) -> f64 {
        let sent: usize = self.messages.iter().map(|m| m.scalars).sum();
        sent as f64 / (samples * nodes * window_len) as f64
    }
}

#[derive(Clone, Debug)]
pub struct SimOutcome {
    pub predictions: Vec<usize>,
    pub trace: InferenceTrace,
    pub log: MessageLog,
    /// Samples that reached FullFuse.
    pub escalated: Vec<usize>,
}

impl SimOutcome {
    /// Bandwidth computed from the log.
    pub fn empirical_bandwidth(&self, model: &DistributedModel) -> f64 {
        let cfg = model.config();
        self.log
            .relative_bandwidth(self.predictions.len(), cfg.nodes(), cfg.window_len())
    }

    /// Bandwidth from the closed form at this run's exit fraction.
    pub fn analytic_bandwidth(&self, model: &DistributedModel) -> Result<f64> {
        let cfg = model.config();
        Ok(relative_bandwidth(
            cfg.window_len(),
            cfg.num_classes(),
            cfg.compressor.factor,
            self.trace.lambda(),
        )?)
    }
}

#[derive(Clone, Copy, Debug)]
enum Event {
    SendClassVector { sample: usize, node: usize },
    Decide { sample: usize },
    SendFrame { sample: usize, node: usize },
    FullFuse { sample: usize },
}

impl Event {
    fn round(self) -> u32 {
        match self {
            Event::SendClassVector { .. } => 0,
            Event::Decide { .. } => 1,
            Event::SendFrame { .. } => 2,
            Event::FullFuse { .. } => 3,
        }
    }
}

fn argmax(row: &[f32]) -> usize {
    // first maximum, as in `Tensor::argmax_rows`
    row.iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > row[best] { i } else { best })
}

/// Per-sample rows of `t` `[B, ...]`.
fn rows(t: &Tensor) -> Vec<Vec<f32>> {
    let width = t.len() / t.dim(0);
    t.data().chunks(width).map(<[f32]>::to_vec).collect()
}

fn node_outputs(model: &DistributedModel, x: &Tensor, compress: bool) -> Result<Vec<Vec<Vec<f32>>>> {
    let mut s = Session::inference(&model.store);
    let xv = s.input(x.clone());
    let mut per_node = Vec::with_capacity(model.nodes());
    for i in 0..model.nodes() {
        let xi = s.tape.slice(xv, 1, i, 1)?;
        let out = if compress {
            model.arch.compress(&mut s, xi, i)?
        } else {
            model.arch.local_logprobs(&mut s, xi, i)?
        };
        per_node.push(rows(s.value(out)));
    }
    Ok(per_node)
}

type Inbox = Vec<Vec<Option<Vec<f32>>>>;

/// Stacks what node `node` sent for `samples` into `[len, tail...]`.
fn gather(inbox: &Inbox, samples: &[usize], node: usize, tail: &[usize]) -> Result<Tensor> {
    let mut shape = vec![samples.len()];
    shape.extend_from_slice(tail);
    let data = samples
        .iter()
        .flat_map(|&i| inbox[i][node].as_deref().expect("message received").iter().copied())
        .collect();
    Ok(Tensor::new(&shape, data)?)
}

/// ClassFuse log-probabilities `[len, |C|]` over received class vectors.
fn fuse_received(model: &DistributedModel, vectors: &Inbox, samples: &[usize]) -> Result<Tensor> {
    let nc = model.config().num_classes();
    let mut s = Session::inference(&model.store);
    let mut vars = Vec::with_capacity(model.nodes());
    for node in 0..model.nodes() {
        let t = gather(vectors, samples, node, &[nc])?;
        vars.push(s.input(t));
    }
    let out = model.arch.fuse_class_vectors(&mut s, &vars)?;
    Ok(s.value(out).clone())
}

/// FullFuse predictions over received class vectors and frames.
fn fullfuse_received(model: &DistributedModel, vectors: &Inbox, frames: &Inbox, samples: &[usize]) -> Result<Vec<usize>> {
    let cfg = model.config();
    let mut s = Session::inference(&model.store);
    let (mut cv, mut fr) = (Vec::new(), Vec::new());
    for node in 0..model.nodes() {
        let t = gather(vectors, samples, node, &[cfg.num_classes()])?;
        cv.push(s.input(t));
        let t = gather(frames, samples, node, &[1, cfg.compressed_len(), 1])?;
        fr.push(s.input(t));
    }
    let classfuse = model.arch.fuse_class_vectors(&mut s, &cv)?;
    let compressfuse = model.arch.classify_frames(&mut s, &fr)?;
    let full = model.arch.fuse_branches(&mut s, classfuse, compressfuse)?;
    Ok(s.value(full).argmax_rows()?)
}

/// Runs the protocol over every sample of `data` and logs each message.
///
/// Computation for a round is batched across samples; the event order and
/// the message log are what a per-sample execution would give.
pub fn simulate_run(model: &DistributedModel, data: &EpochedDataset, policy: ExitPolicy) -> Result<SimOutcome> {
    let n = data.len();
    let m = model.nodes();
    let nc = model.config().num_classes();
    let all: Vec<usize> = (0..n).collect();
    let mut queue: VecDeque<Event> = (0..n)
        .flat_map(|sample| (0..m).map(move |node| Event::SendClassVector { sample, node }))
        .collect();
    let mut log = MessageLog::default();
    let mut class_vectors = None;
    let mut frames = None;
    let mut received_vectors: Inbox = vec![vec![None; m]; n];
    let mut received_frames: Inbox = vec![vec![None; m]; n];
    let mut classfuse = None;
    let mut fullfuse = None;
    let mut entries: Vec<Option<TraceEntry>> = vec![None; n];
    let mut predictions = vec![usize::MAX; n];
    let mut escalated = Vec::new();
    let mut round = 0;

    while let Some(event) = queue.pop_front() {
        round = event.round();
        match event {
            Event::SendClassVector { sample, node } => {
                let vectors = match &class_vectors {
                    Some(v) => v,
                    None => class_vectors.insert(node_outputs(model, &data.x, false)?),
                };
                let v: &Vec<f32> = &vectors[node][sample];
                log.messages.push(Message {
                    round,
                    sample,
                    node,
                    payload: Payload::ClassVector,
                    scalars: v.len(),
                    bytes: BYTES_PER_SCALAR * v.len(),
                });
                received_vectors[sample][node] = Some(v.clone());
                if received_vectors[sample].iter().all(Option::is_some) {
                    queue.push_back(Event::Decide { sample });
                }
            }
            Event::Decide { sample } => {
                // every class vector is in once round 0 has drained
                let classfuse = match &classfuse {
                    Some(c) => c,
                    None => classfuse.insert(fuse_received(model, &received_vectors, &all)?),
                };
                let row = &classfuse.data()[sample * nc..][..nc];
                let entropy = logprob_entropy(row)?;
                let exited = policy.exits(entropy);
                predictions[sample] = argmax(row);
                entries[sample] = Some(TraceEntry {
                    entropy,
                    exited,
                    prediction: predictions[sample],
                    label: Some(data.labels[sample]),
                });
                if !exited {
                    log.requests += m;
                    escalated.push(sample);
                    queue.extend((0..m).map(|node| Event::SendFrame { sample, node }));
                }
            }
            Event::SendFrame { sample, node } => {
                let per_node = match &frames {
                    Some(f) => f,
                    None => {
                        // only the requested windows are compressed
                        let x = data.x.select_rows(&escalated)?;
                        frames.insert(node_outputs(model, &x, true)?)
                    }
                };
                let pos = escalated.binary_search(&sample).expect("frames are only requested for escalated samples");
                let z: &Vec<f32> = &per_node[node][pos];
                log.messages.push(Message {
                    round,
                    sample,
                    node,
                    payload: Payload::CompressedFrame,
                    scalars: z.len(),
                    bytes: BYTES_PER_SCALAR * z.len(),
                });
                received_frames[sample][node] = Some(z.clone());
                if received_frames[sample].iter().all(Option::is_some) {
                    queue.push_back(Event::FullFuse { sample });
                }
            }
            Event::FullFuse { sample } => {
                let full = match &fullfuse {
                    Some(f) => f,
                    None => fullfuse.insert(fullfuse_received(model, &received_vectors, &received_frames, &escalated)?),
                };
                let pos = escalated.binary_search(&sample).expect("only escalated samples reach FullFuse");
                predictions[sample] = full[pos];
                if let Some(e) = entries[sample].as_mut() {
                    e.prediction = predictions[sample];
                }
            }
        }
    }
    log::debug!("simulation finished after round {round}: {} messages", log.messages.len());
    let entries: Vec<TraceEntry> = entries.into_iter().map(|e| e.expect("every sample is decided")).collect();
    Ok(SimOutcome {
        predictions,
        trace: InferenceTrace { entries },
        log,
        escalated,
    })
}

/// Checks that the log and the trace describe the same run: `M`
/// ClassVectors of `|C|` scalars per sample, and `M` CompressedFrames of
/// `L'` scalars exactly for the samples that did not exit.
pub fn reconcile(outcome: &SimOutcome, nodes: usize, num_classes: usize, frame_len: usize) -> Result<()> {
    let n = outcome.trace.entries.len();
    let mut vectors = vec![0usize; n];
    let mut frames = vec![0usize; n];
    for msg in &outcome.log.messages {
        if msg.bytes != BYTES_PER_SCALAR * msg.scalars {
            return Err(HarnessError::Reconcile(format!("message {msg:?} has a wrong byte count")));
        }
        let (counter, expected) = match msg.payload {
            Payload::ClassVector => (&mut vectors, num_classes),
            Payload::CompressedFrame => (&mut frames, frame_len),
        };
        if msg.scalars != expected {
            return Err(HarnessError::Reconcile(format!(
                "{:?} from node {} for sample {} carries {} scalars, expected {expected}",
                msg.payload, msg.node, msg.sample, msg.scalars
            )));
        }
        counter[msg.sample] += 1;
    }
    for (i, e) in outcome.trace.entries.iter().enumerate() {
        let want_frames = if e.exited { 0 } else { nodes };
        if vectors[i] != nodes || frames[i] != want_frames {
            return Err(HarnessError::Reconcile(format!(
                "sample {i}: {} class vectors and {} frames for exited = {}",
                vectors[i], frames[i], e.exited
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_totals() {
        let msg = |payload, scalars| Message {
            round: 0,
            sample: 0,
            node: 0,
            payload,
            scalars,
            bytes: 4 * scalars,
        };
        let log = MessageLog {
            messages: vec![msg(Payload::ClassVector, 4), msg(Payload::ClassVector, 4), msg(Payload::CompressedFrame, 25)],
            requests: 1,
        };
        assert_eq!(log.total_scalars(Payload::ClassVector), 8);
        assert_eq!(log.total_bytes(), 132);
        assert!((log.relative_bandwidth(1, 2, 150) - 33.0 / 300.0).abs() < 1e-15);
    }
}
