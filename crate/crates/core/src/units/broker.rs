use std::collections::VecDeque;
use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard};

use thiserror::Error;

use super::{Behavior, ModelDescription, Variable, Variables};
use crate::value::Value;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Message {
    pub timestamp: f64,
    pub value: f64,
}

#[derive(Debug, Error)]
pub enum FeedError {
    #[error("feed: {0}")]
    Csv(#[from] csv::Error),
    #[error("feed: expected header `timestamp,value`, found `{0}`")]
    Header(String),
    #[error("feed line {line}: timestamps must be strictly increasing")]
    NotIncreasing { line: u64 },
    #[error("feed line {line}: {message}")]
    Field { line: u64, message: String },
}

/// Scripted message stream with a server-side cursor: messages before the
/// cursor have been handed to (and acknowledged by) some consumer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BrokerFeed {
    messages: Vec<Message>,
    cursor: usize,
}

impl BrokerFeed {
    pub fn new(messages: Vec<Message>) -> Result<Self, FeedError> {
        for (i, w) in messages.windows(2).enumerate() {
            if !(w[1].timestamp > w[0].timestamp) {
                return Err(FeedError::NotIncreasing { line: i as u64 + 3 });
            }
        }
        Ok(BrokerFeed { messages, cursor: 0 })
    }

    /// Reads a `timestamp,value` CSV.
    pub fn from_csv<R: std::io::Read>(reader: R) -> Result<Self, FeedError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "timestamp" || &headers[1] != "value" {
            return Err(FeedError::Header(headers.iter().collect::<Vec<_>>().join(",")));
        }
        let mut messages = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let field = |i: usize| -> Result<f64, FeedError> {
                record[i].parse::<f64>().map_err(|e| FeedError::Field {
                    line,
                    message: format!("{}: {e}", &record[i]),
                })
            };
            let msg = Message {
                timestamp: field(0)?,
                value: field(1)?,
            };
            if let Some(prev) = messages.last() {
                let prev: &Message = prev;
                if !(msg.timestamp > prev.timestamp) {
                    return Err(FeedError::NotIncreasing { line });
                }
            }
            messages.push(msg);
        }
        Ok(BrokerFeed { messages, cursor: 0 })
    }

    pub fn from_path(path: &Path) -> Result<Self, FeedError> {
        let file = std::fs::File::open(path).map_err(|e| FeedError::Csv(e.into()))?;
        Self::from_csv(file)
    }

    /// Samples `f` at `count` timestamps spaced `period` apart from zero.
    pub fn sampled(count: usize, period: f64, f: impl Fn(f64) -> f64) -> Self {
        let messages = (0..count)
            .map(|i| {
                let timestamp = i as f64 * period;
                Message {
                    timestamp,
                    value: f(timestamp),
                }
            })
            .collect();
        BrokerFeed { messages, cursor: 0 }
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn peek(&self) -> Option<Message> {
        self.messages.get(self.cursor).copied()
    }

    pub fn take(&mut self) -> Option<Message> {
        let m = self.peek()?;
        self.cursor += 1;
        Some(m)
    }
}

/// A feed shared between all brokers of one run.
#[derive(Debug, Clone, Default)]
pub struct SharedFeed(Arc<Mutex<BrokerFeed>>);

impl SharedFeed {
    pub fn new(feed: BrokerFeed) -> Self {
        SharedFeed(Arc::new(Mutex::new(feed)))
    }

    pub fn lock(&self) -> MutexGuard<'_, BrokerFeed> {
        self.0.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// An independent copy of the current feed state.
    pub fn snapshot(&self) -> Self {
        SharedFeed::new(self.lock().clone())
    }
}

/// Message-broker client. At initialization it claims `prefetch_count`
/// messages into a private queue and publishes the next message it will
/// emit without consuming it. Each step emits one message, from the private
/// queue first and then from the shared cursor. `valid` holds when the
/// emitted message is no older than `maxage` on the unit's clock.
#[derive(Debug)]
pub struct Broker {
    feed: SharedFeed,
    queue: VecDeque<Message>,
    current: Option<Message>,
    last_emission: Option<Message>,
}

impl Broker {
    pub fn new(feed: SharedFeed) -> Self {
        Broker {
            feed,
            queue: VecDeque::new(),
            current: None,
            last_emission: None,
        }
    }

    pub fn description() -> ModelDescription {
        ModelDescription::new(
            super::BROKER_MODEL,
            vec![
                Variable::output("angle", Value::Real(0.0), false),
                Variable::output("valid", Value::Boolean(false), false),
                Variable::output("timestamp", Value::Real(0.0), false),
                Variable::parameter("maxage", Value::Real(0.2)),
                Variable::parameter("prefetch_count", Value::Integer(0)),
            ],
        )
    }

    pub fn queued(&self) -> usize {
        self.queue.len()
    }

    /// Message consumed by the most recent step, if any.
    pub fn last_emission(&self) -> Option<Message> {
        self.last_emission
    }
}

impl Behavior for Broker {
    fn initialize(&mut self, vars: &mut Variables) -> Result<(), String> {
        let maxage = vars.real("maxage");
        let prefetch = vars.integer("prefetch_count");
        if !(maxage >= 0.0) {
            return Err(format!("maxage must be nonnegative (got {maxage})"));
        }
        if prefetch < 0 {
            return Err(format!("prefetch_count must be nonnegative (got {prefetch})"));
        }
        let mut feed = self.feed.lock();
        for _ in 0..prefetch {
            match feed.take() {
                Some(m) => self.queue.push_back(m),
                None => break,
            }
        }
        let upcoming = self.queue.front().copied().or_else(|| feed.peek());
        drop(feed);
        if let Some(m) = upcoming {
            vars.set("angle", m.value);
            vars.set("timestamp", m.timestamp);
        }
        vars.set("valid", false);
        Ok(())
    }

    fn step(&mut self, vars: &mut Variables, t: f64, dt: f64) -> Result<(), String> {
        let next = match self.queue.pop_front() {
            Some(m) => Some(m),
            None => self.feed.lock().take(),
        };
        self.last_emission = next;
        if next.is_some() {
            self.current = next;
        }
        let clock = t + dt;
        if let Some(m) = self.current {
            vars.set("angle", m.value);
            vars.set("timestamp", m.timestamp);
            vars.set("valid", clock - m.timestamp <= vars.real("maxage"));
        }
        Ok(())
    }
}
