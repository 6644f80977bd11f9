use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use hometwin::bridge::{sink_bridge, source_bridge};
use hometwin::consumption::{
    power_to_color, run_service, ConsumptionConfig, Mode, Palette, ServiceHandle,
};
use hometwin::heater::{read_routine, run_month, ACTIONS_TOPIC};
use hometwin::ingestion::{
    appliance_messages, load_sim_output, read_appliance_csv, read_weather_csv, replay_into_log,
    synth_appliances, synth_weather, ApplianceCsvOptions, ReplaySpeed,
};
use hometwin::thermal::{export_trace, run};
use hometwin::{Bus, EventLog, Payload, RoomSpec, SchedulePolicy, SimConfig};

fn wait_until(what: &str, mut done: impl FnMut() -> bool) {
    let deadline = Instant::now() + Duration::from_secs(20);
    while !done() {
        assert!(Instant::now() < deadline, "timed out waiting for {what}");
        std::thread::sleep(Duration::from_millis(2));
    }
}

fn equipment_feed(rows: usize) -> Vec<(String, Payload)> {
    let csv = synth_appliances(11, rows);
    let (rows, skipped) =
        read_appliance_csv(csv.as_bytes(), &ApplianceCsvOptions::default()).unwrap();
    assert_eq!(skipped, 0);
    rows.iter()
        .flat_map(appliance_messages)
        .map(|p| ("equipment".to_owned(), p))
        .collect()
}

fn color_of(event: &Payload) -> String {
    event.text("color").unwrap().to_owned()
}

fn wait_processed(service: &ServiceHandle, equipment: u64, commands: u64) {
    wait_until("service to catch up", || {
        let s = service.status();
        s.equipment_processed >= equipment && s.commands_processed >= commands
    });
}

#[test]
fn consumption_service_follows_modes() {
    let (bus, log) = (Bus::new(), EventLog::in_memory());
    let config = ConsumptionConfig::default();
    let service = run_service(&log, config.clone(), (0, 0)).unwrap();
    let users = source_bridge(&bus, "users", &log, "users").unwrap();
    let oven_sub = bus.subscribe("Oven").unwrap();
    let sinks: Vec<_> = config
        .output_topics()
        .iter()
        .map(|t| sink_bridge(&log, t, &bus, t, 0).unwrap())
        .collect();

    let feed = equipment_feed(300);
    replay_into_log(&bus, &log, &feed, ReplaySpeed::INSTANT).unwrap();
    wait_processed(&service, 1200, 0);

    // Realtime: one colour per reading, in order.
    let palette = Palette::default();
    let mut expected: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (_, p) in &feed {
        let topic = config
            .machine_topic(p.text("equipment").unwrap())
            .to_owned();
        let color =
            power_to_color(p.number("power").unwrap(), &config.thresholds, &palette).unwrap();
        expected.entry(topic).or_default().push(color.to_string());
    }
    for (topic, colors) in &expected {
        let got: Vec<String> = log
            .read_all(topic)
            .unwrap()
            .iter()
            .map(|e| color_of(&e.payload))
            .collect();
        assert_eq!(&got, colors, "{topic}");
    }
    wait_until("oven frames", || oven_sub.pending() >= 300);
    let first = oven_sub.try_recv().unwrap();
    assert_eq!(
        first.payload,
        format!(
            r#"{{"color":"{}","equipment":"Oven"}}"#,
            expected["Oven"][0]
        )
    );

    // Limited over everything: one colour per machine from the mean.
    bus.publish(
        "users",
        r#"{"command": "limited", "from_date": "2015-01-01", "to_date": "2017-12-31"}"#,
    )
    .unwrap();
    wait_processed(&service, 1200, 1);
    assert!(matches!(service.status().mode, Mode::Limited { .. }));
    for (topic, colors) in &expected {
        let events = log.read_all(topic).unwrap();
        assert_eq!(events.len(), colors.len() + 1);
        let name = config
            .machine_topics
            .iter()
            .find(|(_, t)| *t == topic)
            .unwrap()
            .0;
        let powers: Vec<f64> = feed
            .iter()
            .filter(|(_, p)| p.text("equipment") == Some(name))
            .map(|(_, p)| p.number("power").unwrap())
            .collect();
        let mean = powers.iter().sum::<f64>() / powers.len() as f64;
        let want = power_to_color(mean, &config.thresholds, &palette)
            .unwrap()
            .to_string();
        assert_eq!(color_of(&events.last().unwrap().payload), want, "{topic}");
    }

    // Readings during limited mode are not coloured.
    let before = log.len("Oven").unwrap();
    replay_into_log(&bus, &log, &equipment_feed(5), ReplaySpeed::INSTANT).unwrap();
    wait_processed(&service, 1220, 1);
    assert_eq!(log.len("Oven").unwrap(), before);

    // Green palette, bad command, then back to realtime.
    bus.publish("users", r#"{"color": 2}"#).unwrap();
    bus.publish("users", r#"{"command": "pause"}"#).unwrap();
    bus.publish("users", r#"{"command": "realtime"}"#).unwrap();
    wait_processed(&service, 1220, 4);
    assert_eq!(service.status().mode, Mode::Realtime);
    let errors = log.read_all("service-errors").unwrap();
    assert_eq!(errors.len(), 1);
    assert!(errors[0].payload.text("error").unwrap().contains("pause"));
    let resumed = color_of(&log.read_all("Oven").unwrap().last().unwrap().payload);
    assert!(
        resumed.starts_with("0,") && !resumed.starts_with("0,0,"),
        "{resumed}"
    );
    assert_eq!(service.status().colors["Oven"], resumed);

    service.stop().unwrap();
    users.stop().unwrap();
    for s in sinks {
        s.stop().unwrap();
    }
}

#[test]
fn heater_month_through_bus_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let traces = vec![run(&RoomSpec::small_plain(), &SimConfig::default()).unwrap()];
    let csv = dir.path().join("trace.csv");
    let columns = export_trace(&traces, &csv).unwrap();
    let (bus, log) = (Bus::with_capacity(64), EventLog::in_memory());
    load_sim_output(&csv, &columns, &bus, &log).unwrap();
    let weather = read_weather_csv(synth_weather(5, &[2]).unwrap().as_bytes()).unwrap();
    let actions = bus.subscribe(ACTIONS_TOPIC).unwrap();
    let forward = sink_bridge(&log, ACTIONS_TOPIC, &bus, ACTIONS_TOPIC, 0).unwrap();
    let policy = SchedulePolicy::default();
    let path = run_month(
        "small-plain",
        "small-plain",
        2,
        &weather,
        &bus,
        &log,
        &policy,
        dir.path(),
    )
    .unwrap();
    assert!(path.ends_with("heater-routine-small-plain-2.csv"));
    let rows = read_routine(std::fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(rows.len(), 28);
    assert_eq!(log.len("temperature").unwrap(), 28 * 42);
    assert_eq!(log.len(ACTIONS_TOPIC).unwrap(), 28);
    for row in &rows {
        assert!(policy.contains(row.action_time));
    }
    wait_until("actions on the bus", || actions.pending() >= 28);
    let msg = Payload::parse(&actions.try_recv().unwrap().payload).unwrap();
    assert_eq!(
        msg.text("time"),
        Some(rows[0].action_time.to_string().as_str())
    );
    forward.stop().unwrap();

    // A missing trace aborts before anything is consumed.
    let before = log.len("temperature").unwrap();
    assert!(run_month(
        "x",
        "no-such-trace",
        2,
        &weather,
        &bus,
        &log,
        &policy,
        dir.path()
    )
    .is_err());
    assert_eq!(log.len("temperature").unwrap(), before);
}
