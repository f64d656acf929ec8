//! Transports. [`SimEndpoint`] pairs share an in-process queue with a fixed
//! delivery latency driven by the caller's simulated clock;
//! [`StreamTransport`] carries the same framed bytes over any byte stream,
//! e.g. a loopback TCP socket.

use std::cell::RefCell;
use std::collections::{BTreeMap, VecDeque};
use std::io::{Read, Write};
use std::rc::Rc;

use super::message::{Direction, LinkStats, Message};
use crate::error::{Error, Result};

pub trait Transport {
    fn send(&mut self, now: f64, msg: Message) -> Result<()>;
    /// Messages that have arrived by `now`, in send order.
    fn recv(&mut self, now: f64) -> Result<Vec<Message>>;
    fn sent(&self) -> &LinkStats;
    fn received(&self) -> &LinkStats;
}

/// Hands out sequence numbers per (device, direction).
#[derive(Debug, Clone, Default)]
pub struct Sequencer {
    next: BTreeMap<(u32, Direction), u64>,
}

impl Sequencer {
    pub fn next(&mut self, device: u32, direction: Direction) -> u64 {
        let slot = self.next.entry((device, direction)).or_insert(0);
        let seq = *slot;
        *slot += 1;
        seq
    }
}

/// Rejects a message whose seq does not increase for its (device, direction).
#[derive(Debug, Clone, Default)]
struct SeqGuard {
    last: BTreeMap<(u32, Direction), u64>,
}

impl SeqGuard {
    fn admit(&mut self, msg: &Message) -> Result<()> {
        let key = (msg.header.device_id, msg.header.kind.direction());
        if let Some(&last) = self.last.get(&key) {
            if msg.header.seq <= last {
                return Err(Error::InvalidArgument(format!(
                    "seq {} not after {last} for device {}",
                    msg.header.seq, msg.header.device_id
                )));
            }
        }
        self.last.insert(key, msg.header.seq);
        Ok(())
    }
}

#[derive(Debug, Default)]
struct Queue {
    items: VecDeque<(f64, Message)>,
    last_delivery: f64,
}

/// One end of an in-process link.
#[derive(Debug)]
pub struct SimEndpoint {
    latency_s: f64,
    outbound: Rc<RefCell<Queue>>,
    inbound: Rc<RefCell<Queue>>,
    guard: SeqGuard,
    sent: LinkStats,
    received: LinkStats,
}

/// Two connected endpoints with a fixed one-way latency.
pub fn sim_pair(latency_s: f64) -> (SimEndpoint, SimEndpoint) {
    let a_to_b = Rc::new(RefCell::new(Queue::default()));
    let b_to_a = Rc::new(RefCell::new(Queue::default()));
    let make = |outbound: &Rc<RefCell<Queue>>, inbound: &Rc<RefCell<Queue>>| SimEndpoint {
        latency_s,
        outbound: Rc::clone(outbound),
        inbound: Rc::clone(inbound),
        guard: SeqGuard::default(),
        sent: LinkStats::default(),
        received: LinkStats::default(),
    };
    (make(&a_to_b, &b_to_a), make(&b_to_a, &a_to_b))
}

impl SimEndpoint {
    /// Sends with extra delay on top of the link latency (e.g. encoding
    /// time). Delivery stays FIFO.
    pub fn send_delayed(&mut self, now: f64, extra_delay: f64, msg: Message) -> Result<f64> {
        self.guard.admit(&msg)?;
        self.sent.record(&msg, now);
        let mut q = self.outbound.borrow_mut();
        let at = (now + extra_delay + self.latency_s).max(q.last_delivery);
        q.last_delivery = at;
        q.items.push_back((at, msg));
        Ok(at)
    }

    /// Arrival time of the next queued inbound message.
    pub fn next_arrival(&self) -> Option<f64> {
        self.inbound.borrow().items.front().map(|(t, _)| *t)
    }
}

impl Transport for SimEndpoint {
    fn send(&mut self, now: f64, msg: Message) -> Result<()> {
        self.send_delayed(now, 0.0, msg).map(|_| ())
    }

    fn recv(&mut self, now: f64) -> Result<Vec<Message>> {
        let mut out = Vec::new();
        let mut q = self.inbound.borrow_mut();
        while q.items.front().is_some_and(|(t, _)| *t <= now) {
            let (t, msg) = q.items.pop_front().expect("front exists");
            self.received.record(&msg, t);
            out.push(msg);
        }
        Ok(out)
    }

    fn sent(&self) -> &LinkStats {
        &self.sent
    }

    fn received(&self) -> &LinkStats {
        &self.received
    }
}

/// Framed messages over a byte stream. `recv` blocks for exactly one
/// message and returns an empty vector at end of stream.
#[derive(Debug)]
pub struct StreamTransport<S> {
    stream: S,
    guard: SeqGuard,
    sent: LinkStats,
    received: LinkStats,
}

impl<S: Read + Write> StreamTransport<S> {
    pub fn new(stream: S) -> Self {
        Self { stream, guard: SeqGuard::default(), sent: LinkStats::default(), received: LinkStats::default() }
    }

    pub fn into_inner(self) -> S {
        self.stream
    }
}

impl<S: Read + Write> Transport for StreamTransport<S> {
    fn send(&mut self, now: f64, msg: Message) -> Result<()> {
        self.guard.admit(&msg)?;
        msg.write_to(&mut self.stream)?;
        self.stream.flush()?;
        self.sent.record(&msg, now);
        Ok(())
    }

    fn recv(&mut self, now: f64) -> Result<Vec<Message>> {
        match Message::read_from(&mut self.stream)? {
            Some(msg) => {
                self.received.record(&msg, now);
                Ok(vec![msg])
            }
            None => Ok(Vec::new()),
        }
    }

    fn sent(&self) -> &LinkStats {
        &self.sent
    }

    fn received(&self) -> &LinkStats {
        &self.received
    }
}
