//! The subcommands, as plain functions over an opened [`Platform`].

use std::path::PathBuf;
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use hometwin::bridge::{sink_bridge, source_bridge, BridgeHandle};
use hometwin::consumption::{run_service, ConsumptionConfig, ServiceHandle, ServiceStatus};
use hometwin::evaluation::{run_evaluation, summary_text, RoomTrace, Summary};
use hometwin::heater::{run_month, ACTIONS_TOPIC};
use hometwin::ingestion::{
    appliance_messages, load_sim_output, replay_into_log, ApplianceRow, ReplaySpeed,
};
use hometwin::mqtt::MqttListener;
use hometwin::thermal::{export_trace, run};
use hometwin::{Bus, EventLog, Payload};
use tokio::net::TcpListener;

use crate::config::Config;
use crate::gateway::{self, GatewayState};

/// Bus and log shared by every component of one invocation.
pub struct Platform {
    pub config: Config,
    pub bus: Bus,
    pub log: EventLog,
}

impl Platform {
    /// Opens the persistent log under the configured data directory.
    pub fn open(config: Config) -> Result<Self> {
        let dir = config.log_dir();
        std::fs::create_dir_all(&dir)
            .with_context(|| format!("creating log directory {}", dir.display()))?;
        let log = EventLog::open(&dir)
            .with_context(|| format!("opening event log in {}", dir.display()))?;
        Ok(Self::with_log(config, log))
    }

    pub fn with_log(config: Config, log: EventLog) -> Self {
        let bus = Bus::with_capacity(config.bus_capacity);
        Self { config, bus, log }
    }

    fn room_traces(&self) -> Vec<RoomTrace> {
        self.config
            .rooms
            .iter()
            .map(|r| RoomTrace {
                room: r.name.clone(),
                trace_topic: r.name.clone(),
            })
            .collect()
    }

    /// Whether every room has a complete trace topic in the log.
    pub fn traces_loaded(&self) -> bool {
        let expected = u64::from(self.config.simulation.sample_count());
        self.config
            .rooms
            .iter()
            .all(|r| self.log.has_topic(&r.name) && self.log.len(&r.name).ok() == Some(expected))
    }
}

#[derive(Debug, Clone)]
pub struct SimulateReport {
    pub csv: PathBuf,
    /// Trace topic and event count per room.
    pub topics: Vec<(String, u64)>,
}

/// Simulates every room, exports the traces and loads them into the log.
pub fn simulate(p: &Platform) -> Result<SimulateReport> {
    let cfg = &p.config;
    cfg.validate()?;
    let traces = std::thread::scope(|scope| {
        let workers: Vec<_> = cfg
            .rooms
            .iter()
            .map(|room| scope.spawn(move || run(room, &cfg.simulation)))
            .collect();
        workers
            .into_iter()
            .zip(&cfg.rooms)
            .map(|(w, room)| {
                w.join()
                    .expect("simulation thread panicked")
                    .with_context(|| format!("simulating {}", room.name))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let csv = cfg.trace_csv();
    let columns = export_trace(&traces, &csv).context("exporting traces")?;
    load_sim_output(&csv, &columns, &p.bus, &p.log).context("loading traces")?;
    let topics = columns
        .iter()
        .map(|c| Ok((c.topic.clone(), p.log.len(&c.topic)?)))
        .collect::<Result<_>>()?;
    Ok(SimulateReport { csv, topics })
}

/// Heater routine for one room and month; returns the routine file.
pub fn uc2(p: &Platform, room: &str, month: u32) -> Result<PathBuf> {
    let cfg = &p.config;
    if cfg.room(room).is_none() {
        let known: Vec<_> = cfg.rooms.iter().map(|r| r.name.as_str()).collect();
        bail!("unknown room `{room}` (configured: {})", known.join(", "));
    }
    let weather = cfg.weather_rows()?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    run_month(
        room,
        room,
        month,
        &weather,
        &p.bus,
        &p.log,
        &cfg.policy,
        &cfg.output_dir,
    )
    .with_context(|| format!("heater service for {room}, month {month}"))
}

/// All scenarios, baselines and the report. Simulates first when a trace is
/// missing from the log.
pub fn evaluate(p: &Platform) -> Result<Summary> {
    let cfg = &p.config;
    cfg.validate()?;
    if !p.traces_loaded() {
        log::info!("traces missing, simulating first");
        simulate(p)?;
    }
    let weather = cfg.weather_rows()?;
    let (_, summary) = run_evaluation(
        &p.bus,
        &p.log,
        &weather,
        &p.room_traces(),
        &cfg.months,
        &cfg.policy,
        &cfg.output_dir,
    )?;
    Ok(summary)
}

pub fn evaluate_text(p: &Platform, summary: &Summary) -> String {
    summary_text(summary, &p.config.policy)
}

/// The use-case-1 pipeline over a platform: the consumption service, a
/// source bridge for user commands, and sink bridges putting every machine
/// topic and the heater actions back on the bus.
pub struct Uc1Stack {
    bus: Bus,
    log: EventLog,
    config: ConsumptionConfig,
    service: Option<ServiceHandle>,
    bridges: Vec<BridgeHandle>,
    status: Arc<RwLock<ServiceStatus>>,
}

impl Uc1Stack {
    /// Starts from empty equipment, command and colour topics.
    pub fn start(bus: &Bus, log: &EventLog, config: &ConsumptionConfig) -> Result<Self> {
        let outputs = config.output_topics();
        for topic in [
            &config.equipment_topic,
            &config.users_topic,
            &config.errors_topic,
        ]
        .into_iter()
        .chain(&outputs)
        {
            log.drop_topic(topic)?;
        }
        let mut bridges = vec![source_bridge(
            bus,
            &config.users_topic,
            log,
            &config.users_topic,
        )?];
        for topic in &outputs {
            bridges.push(sink_bridge(log, topic, bus, topic, 0)?);
        }
        log.create_topic(ACTIONS_TOPIC)?;
        let actions_from = log.len(ACTIONS_TOPIC)?;
        bridges.push(sink_bridge(
            log,
            ACTIONS_TOPIC,
            bus,
            ACTIONS_TOPIC,
            actions_from,
        )?);
        let service = run_service(log, config.clone(), (0, 0))?;
        let status = service.status_ref();
        Ok(Self {
            bus: bus.clone(),
            log: log.clone(),
            config: config.clone(),
            service: Some(service),
            bridges,
            status,
        })
    }

    pub fn status(&self) -> ServiceStatus {
        self.status.read().expect("status poisoned").clone()
    }

    /// Topics a dashboard wants to watch.
    pub fn watched_topics(&self) -> Vec<String> {
        let mut topics = self.config.output_topics();
        topics.push(ACTIONS_TOPIC.to_owned());
        topics
    }

    pub fn gateway_state(&self) -> GatewayState {
        GatewayState {
            bus: self.bus.clone(),
            users_topic: self.config.users_topic.clone(),
            status: self.status.clone(),
            ws_topics: self.watched_topics(),
        }
    }

    /// Publishes the rows on the equipment topic and returns once all of
    /// them are in the log.
    pub fn replay(&self, rows: &[ApplianceRow], speed: ReplaySpeed) -> Result<u64> {
        let topic = &self.config.equipment_topic;
        let msgs: Vec<(String, Payload)> = rows
            .iter()
            .flat_map(appliance_messages)
            .map(|m| (topic.clone(), m))
            .collect();
        Ok(replay_into_log(&self.bus, &self.log, &msgs, speed)?)
    }

    /// Waits until the service has handled everything currently logged.
    pub fn wait_idle(&self, timeout: Duration) -> Result<bool> {
        let deadline = Instant::now() + timeout;
        loop {
            let s = self.status();
            let equipment = self.log.len(&self.config.equipment_topic)?;
            let commands = self.log.len(&self.config.users_topic)?;
            if s.equipment_processed >= equipment && s.commands_processed >= commands {
                return Ok(true);
            }
            if Instant::now() >= deadline {
                return Ok(false);
            }
            std::thread::sleep(Duration::from_millis(5));
        }
    }

    /// Stops the service, then the bridges, after they drain.
    pub fn shutdown(mut self) -> Result<()> {
        if let Some(service) = self.service.take() {
            service.stop()?;
        }
        for bridge in self.bridges.drain(..) {
            bridge.stop()?;
        }
        Ok(())
    }
}

/// Resolves on ctrl-c, or on SIGTERM where there is one.
async fn stop_signal() -> std::io::Result<()> {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        let mut term = signal(SignalKind::terminate())?;
        tokio::select! {
            r = tokio::signal::ctrl_c() => r,
            _ = term.recv() => Ok(()),
        }
    }
    #[cfg(not(unix))]
    tokio::signal::ctrl_c().await
}

/// Options for the live commands.
#[derive(Debug, Clone, Copy)]
pub struct LiveOptions {
    pub speed: ReplaySpeed,
    /// Exit once the replay has been processed instead of serving on.
    pub once: bool,
}

/// Runs use case 1 with the gateway (and MQTT listener, if enabled) until
/// ctrl-c or SIGTERM, or until the replay is processed with `once`.
pub fn run_live(p: &Platform, opts: LiveOptions) -> Result<ServiceStatus> {
    let cfg = &p.config;
    cfg.validate()?;
    let rows = cfg.appliance_rows()?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    let stack = Uc1Stack::start(&p.bus, &p.log, &cfg.consumption)?;
    let listener = runtime
        .block_on(TcpListener::bind(&cfg.gateway.bind))
        .with_context(|| format!("binding gateway to {}", cfg.gateway.bind))?;
    println!("gateway listening on http://{}", listener.local_addr()?);
    let mqtt = if cfg.mqtt.enabled {
        let m = MqttListener::bind(&cfg.mqtt.bind, p.bus.clone())
            .with_context(|| format!("binding MQTT listener to {}", cfg.mqtt.bind))?;
        println!("mqtt listening on {}", m.local_addr());
        Some(m)
    } else {
        None
    };
    let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
    let server = runtime.spawn(gateway::serve(listener, stack.gateway_state(), async {
        let _ = stop_rx.await;
    }));

    let outcome = std::thread::scope(|scope| -> Result<()> {
        let replay = scope.spawn(|| stack.replay(&rows, opts.speed));
        if opts.once {
            let sent = replay.join().expect("replay thread panicked")?;
            if !stack.wait_idle(Duration::from_secs(120))? {
                bail!("consumption service did not catch up with {sent} readings");
            }
            println!("replayed {sent} readings");
        } else {
            runtime.block_on(stop_signal())?;
            // Closing the bus ends an unfinished replay with an error.
            p.bus.close();
            if let Err(e) = replay.join().expect("replay thread panicked") {
                log::info!("replay interrupted: {e}");
            }
        }
        Ok(())
    });

    let _ = stop_tx.send(());
    let status = stack.status();
    if let Some(m) = mqtt {
        m.shutdown();
    }
    stack.shutdown()?;
    p.bus.close();
    runtime.block_on(server)??;
    runtime.shutdown_timeout(Duration::from_secs(1));
    outcome?;
    Ok(status)
}
