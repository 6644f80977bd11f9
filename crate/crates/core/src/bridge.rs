//! Connectors between the bus and the event log.
//!
//! A source bridge subscribes to a bus topic and appends every message to a
//! log topic; payloads that are not flat JSON objects go to `<topic>.dlq`
//! with their raw text. A sink bridge tails a log topic from an offset and
//! publishes each event's canonical JSON on a bus topic.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crate::bus::{Bus, BusError, RecvError};
use crate::event_log::{EventLog, LogError};
use crate::payload::Payload;

const POLL: Duration = Duration::from_millis(10);
const SINK_BATCH: usize = 256;

pub fn dead_letter_topic(log_topic: &str) -> String {
    format!("{log_topic}.dlq")
}

#[derive(Debug, thiserror::Error)]
pub enum BridgeError {
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("bridge worker panicked")]
    Panicked,
}

/// Counters for one bridge.
#[derive(Debug, Default)]
pub struct BridgeStats {
    /// Messages taken off the bus (source) or events read (sink).
    pub observed: AtomicU64,
    pub appended: AtomicU64,
    pub dead_lettered: AtomicU64,
    pub forwarded: AtomicU64,
    /// Messages the bus discarded from a full source subscription.
    pub dropped: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BridgeReport {
    pub observed: u64,
    pub appended: u64,
    pub dead_lettered: u64,
    pub forwarded: u64,
    pub dropped: u64,
}

impl BridgeStats {
    fn snapshot(&self) -> BridgeReport {
        BridgeReport {
            observed: self.observed.load(Ordering::SeqCst),
            appended: self.appended.load(Ordering::SeqCst),
            dead_lettered: self.dead_lettered.load(Ordering::SeqCst),
            forwarded: self.forwarded.load(Ordering::SeqCst),
            dropped: self.dropped.load(Ordering::SeqCst),
        }
    }
}

/// A running bridge worker.
pub struct BridgeHandle {
    name: String,
    stop: Arc<AtomicBool>,
    stats: Arc<BridgeStats>,
    worker: Option<JoinHandle<Result<(), BridgeError>>>,
}

impl std::fmt::Debug for BridgeHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BridgeHandle")
            .field("name", &self.name)
            .field("stats", &self.report())
            .finish()
    }
}

impl BridgeHandle {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn report(&self) -> BridgeReport {
        self.stats.snapshot()
    }

    /// Whether the worker has exited (normally or with an error).
    pub fn is_finished(&self) -> bool {
        self.worker.as_ref().is_none_or(JoinHandle::is_finished)
    }

    /// Waits until the bridge has handled at least `count` messages/events.
    pub fn wait_observed(&self, count: u64, timeout: Duration) -> bool {
        self.wait_until(timeout, |r| r.observed >= count)
    }

    /// Waits until `count` published messages are accounted for, either
    /// handled or dropped by the bus. Returns the final report, or `None` on
    /// timeout.
    pub fn wait_accounted(&self, count: u64, timeout: Duration) -> Option<BridgeReport> {
        self.wait_until(timeout, |r| r.observed + r.dropped >= count)
            .then(|| self.report())
    }

    fn wait_until(&self, timeout: Duration, done: impl Fn(&BridgeReport) -> bool) -> bool {
        let deadline = Instant::now() + timeout;
        loop {
            if done(&self.report()) {
                return true;
            }
            if Instant::now() >= deadline || self.is_finished() {
                return done(&self.report());
            }
            std::thread::sleep(Duration::from_millis(1));
        }
    }

    /// Drains whatever is already pending, stops the worker and reports.
    pub fn stop(mut self) -> Result<BridgeReport, BridgeError> {
        self.stop.store(true, Ordering::SeqCst);
        self.join()
    }

    fn join(&mut self) -> Result<BridgeReport, BridgeError> {
        if let Some(worker) = self.worker.take() {
            worker.join().map_err(|_| BridgeError::Panicked)??;
        }
        Ok(self.stats.snapshot())
    }
}

impl Drop for BridgeHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Err(e) = self.join() {
            log::error!("bridge {} stopped with error: {e}", self.name);
        }
    }
}

/// Starts a bus → log bridge. The subscription is in place when this returns.
pub fn source_bridge(
    bus: &Bus,
    bus_topic: &str,
    log: &EventLog,
    log_topic: &str,
) -> Result<BridgeHandle, BridgeError> {
    let subscription = bus.subscribe(bus_topic)?;
    log.create_topic(log_topic)?;
    let dlq = dead_letter_topic(log_topic);
    let stop = Arc::new(AtomicBool::new(false));
    let stats = Arc::new(BridgeStats::default());
    let name = format!("source {bus_topic} -> {log_topic}");
    let worker = {
        let (stop, stats, log, log_topic) = (
            stop.clone(),
            stats.clone(),
            log.clone(),
            log_topic.to_owned(),
        );
        let thread_name = name.clone();
        std::thread::Builder::new()
            .name(name.clone())
            .spawn(move || {
                let handle = |text: String| -> Result<(), LogError> {
                    match Payload::parse(&text) {
                        Ok(payload) => {
                            log.append(&log_topic, payload)?;
                            stats.appended.fetch_add(1, Ordering::SeqCst);
                        }
                        Err(err) => {
                            log::warn!("{thread_name}: dead-lettering payload: {err}");
                            let letter = Payload::new()
                                .with("raw", text)
                                .with("error", err.to_string());
                            log.append(&dlq, letter)?;
                            stats.dead_lettered.fetch_add(1, Ordering::SeqCst);
                        }
                    }
                    stats.observed.fetch_add(1, Ordering::SeqCst);
                    Ok(())
                };
                let note_drops = || {
                    stats
                        .dropped
                        .store(subscription.dropped(), Ordering::SeqCst)
                };
                loop {
                    if stop.load(Ordering::SeqCst) {
                        while let Some(msg) = subscription.try_recv() {
                            handle(msg.payload)?;
                        }
                        note_drops();
                        return Ok(());
                    }
                    let next = subscription.recv_timeout(POLL);
                    note_drops();
                    match next {
                        Ok(msg) => handle(msg.payload)?,
                        Err(RecvError::Timeout) => {}
                        Err(RecvError::Closed) => return Ok(()),
                    }
                }
            })
            .expect("spawn bridge thread")
    };
    Ok(BridgeHandle {
        name,
        stop,
        stats,
        worker: Some(worker),
    })
}

/// Starts a log → bus bridge forwarding every event from `from_offset` on,
/// including events appended later, in offset order.
pub fn sink_bridge(
    log: &EventLog,
    log_topic: &str,
    bus: &Bus,
    bus_topic: &str,
    from_offset: u64,
) -> Result<BridgeHandle, BridgeError> {
    log.create_topic(log_topic)?;
    if bus_topic.is_empty() {
        return Err(BusError::InvalidTopic.into());
    }
    let stop = Arc::new(AtomicBool::new(false));
    let stats = Arc::new(BridgeStats::default());
    let name = format!("sink {log_topic} -> {bus_topic}");
    let worker = {
        let (stop, stats, log, bus) = (stop.clone(), stats.clone(), log.clone(), bus.clone());
        let (log_topic, bus_topic) = (log_topic.to_owned(), bus_topic.to_owned());
        std::thread::Builder::new()
            .name(name.clone())
            .spawn(move || {
                let mut cursor = from_offset;
                loop {
                    // Read the stop flag before reading so a final pass sees
                    // everything appended before `stop` was requested.
                    let stopping = stop.load(Ordering::SeqCst);
                    let batch = log.read_from(&log_topic, cursor, SINK_BATCH)?;
                    for event in &batch {
                        bus.publish(&bus_topic, event.payload.to_canonical())?;
                        stats.observed.fetch_add(1, Ordering::SeqCst);
                        stats.forwarded.fetch_add(1, Ordering::SeqCst);
                        cursor = event.offset + 1;
                    }
                    if batch.len() == SINK_BATCH {
                        continue;
                    }
                    if stopping || bus.is_closed() {
                        return Ok(());
                    }
                    log.wait_for(&log_topic, cursor, POLL)?;
                }
            })
            .expect("spawn bridge thread")
    };
    Ok(BridgeHandle {
        name,
        stop,
        stats,
        worker: Some(worker),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const WAIT: Duration = Duration::from_secs(5);

    #[test]
    fn source_appends_parsed_payloads() {
        let (bus, log) = (Bus::new(), EventLog::in_memory());
        let bridge = source_bridge(&bus, "temperature", &log, "temperature").unwrap();
        bus.publish("temperature", r#"{"temperature": 19, "time": "10:15"}"#)
            .unwrap();
        assert!(bridge.wait_observed(1, WAIT));
        let ev = &log.read_all("temperature").unwrap()[0];
        assert_eq!(
            ev.payload,
            Payload::new()
                .with("temperature", 19.0)
                .with("time", "10:15")
        );
        let report = bridge.stop().unwrap();
        assert_eq!(report.appended, 1);
    }

    #[test]
    fn unparseable_goes_to_dead_letters() {
        let (bus, log) = (Bus::new(), EventLog::in_memory());
        let bridge = source_bridge(&bus, "t", &log, "t").unwrap();
        bus.publish("t", "not json").unwrap();
        let report = bridge.stop().unwrap();
        assert_eq!(
            report,
            BridgeReport {
                observed: 1,
                appended: 0,
                dead_lettered: 1,
                forwarded: 0,
                dropped: 0
            }
        );
        assert_eq!(log.len("t").unwrap(), 0);
        let letters = log.read_all("t.dlq").unwrap();
        assert_eq!(letters[0].payload.text("raw"), Some("not json"));
    }

    #[test]
    fn sink_forwards_backlog_then_live_in_order() {
        let (bus, log) = (Bus::new(), EventLog::in_memory());
        for i in 0..3 {
            log.append(
                "heater-actions",
                Payload::new().with("on", true).with("n", i as i64),
            )
            .unwrap();
        }
        let sub = bus.subscribe("heater-actions").unwrap();
        let bridge = sink_bridge(&log, "heater-actions", &bus, "heater-actions", 0).unwrap();
        log.append(
            "heater-actions",
            Payload::new().with("on", true).with("time", "16:00"),
        )
        .unwrap();
        assert!(bridge.wait_observed(4, WAIT));
        let got: Vec<_> = (0..4)
            .map(|_| sub.recv_timeout(WAIT).unwrap().payload)
            .collect();
        assert_eq!(got[0], r#"{"n":0,"on":true}"#);
        assert_eq!(got[2], r#"{"n":2,"on":true}"#);
        assert_eq!(got[3], r#"{"on":true,"time":"16:00"}"#);
        assert_eq!(bridge.stop().unwrap().forwarded, 4);
    }

    #[test]
    fn sink_from_end_skips_backlog() {
        let (bus, log) = (Bus::new(), EventLog::in_memory());
        log.append("a", Payload::new().with("old", 1_i64)).unwrap();
        let sub = bus.subscribe("a").unwrap();
        let bridge = sink_bridge(&log, "a", &bus, "a", log.len("a").unwrap()).unwrap();
        log.append("a", Payload::new().with("new", 1_i64)).unwrap();
        assert_eq!(sub.recv_timeout(WAIT).unwrap().payload, r#"{"new":1}"#);
        bridge.stop().unwrap();
        assert!(sub.try_recv().is_none());
    }

    #[test]
    fn stop_drains_pending_messages() {
        let (bus, log) = (Bus::new(), EventLog::in_memory());
        let bridge = source_bridge(&bus, "t", &log, "t").unwrap();
        for i in 0..500 {
            bus.publish("t", format!("{{\"i\":{i}}}")).unwrap();
        }
        let report = bridge.stop().unwrap();
        assert_eq!(report.observed, 500);
        assert_eq!(report.appended + report.dead_lettered, report.observed);
        assert_eq!(log.len("t").unwrap(), 500);
    }
}
