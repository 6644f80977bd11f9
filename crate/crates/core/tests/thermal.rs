use hometwin::ingestion::{load_sim_output, sim_messages};
use hometwin::thermal::{
    build_room, export_trace, run, run_raw, write_traces, Boundary, Grid, Material, RoomSpec,
    SimConfig, SimTrace,
};
use hometwin::{Bus, EventLog};
use proptest::prelude::*;

const THIRTEEN_HOURS: u32 = 13 * 3600;

fn default_traces() -> Vec<SimTrace<f64>> {
    let config = SimConfig::default();
    RoomSpec::defaults()
        .iter()
        .map(|r| run(r, &config).unwrap())
        .collect()
}

#[test]
fn default_rooms_reach_target_within_thirteen_hours() {
    for trace in default_traces() {
        let t = trace
            .first_crossing(20.0)
            .unwrap_or_else(|| panic!("{} never reaches 20 C", trace.room));
        assert!(t <= THIRTEEN_HOURS, "{} reaches 20 C at {t} s", trace.room);
        assert!(trace.is_nondecreasing());
        assert_eq!(trace.samples.len(), 468);
    }
}

#[test]
fn windowed_room_lags_from_the_first_hour() {
    let config = SimConfig::<f64>::default();
    let windowed = run(&RoomSpec::small_window(), &config).unwrap();
    let plain = run(&RoomSpec::small_plain(), &config).unwrap();
    for (w, p) in windowed.samples.iter().zip(&plain.samples) {
        assert_eq!(w.0, p.0);
        if w.0 >= 3600 {
            assert!(w.1 < p.1, "at {} s windowed {} vs plain {}", w.0, w.1, p.1);
        }
    }
}

#[test]
fn halving_the_mesh_moves_traces_less_than_half_a_degree() {
    let config = SimConfig::<f64>::default();
    let fine = config.refined(2);
    for room in RoomSpec::defaults() {
        let coarse = run_raw(&room, &config).unwrap();
        let refined = run_raw(&room, &fine).unwrap();
        let sup = coarse
            .samples
            .iter()
            .zip(&refined.samples)
            .map(|(a, b)| (a.1 - b.1).abs())
            .fold(0.0f64, f64::max);
        println!("{}: sup difference {sup:.3} C", room.name);
        assert!(sup < 0.5, "{}: sup difference {sup}", room.name);
    }
}

#[test]
fn f32_and_f64_agree() {
    let room64 = RoomSpec::<f64>::small_plain();
    let room32 = RoomSpec::<f32>::small_plain();
    let a = run(
        &room64,
        &SimConfig {
            duration_s: 3600,
            ..SimConfig::default()
        },
    )
    .unwrap();
    let b = run(
        &room32,
        &SimConfig {
            duration_s: 3600,
            ..SimConfig::default()
        },
    )
    .unwrap();
    for (x, y) in a.samples.iter().zip(&b.samples) {
        assert!((x.1 - f64::from(y.1)).abs() < 0.05);
    }
}

#[test]
fn insulated_room_conserves_heat_without_heater() {
    let mut room = RoomSpec::<f64>::small_window();
    room.heater.power_w = 0.0;
    let config = SimConfig {
        boundary: Boundary::Insulated,
        initial_c: 5.0,
        ..SimConfig::default()
    };
    let mut rg = build_room(&room, &config).unwrap();
    // Uneven start so heat actually moves.
    for x in 0..rg.grid.nx() / 2 {
        for y in 0..rg.grid.ny() {
            rg.grid.set_temp(x, y, 25.0);
        }
    }
    let before = rg.grid.heat_content();
    for _ in 0..1000 {
        rg.grid.step(config.dt_s).unwrap();
    }
    let drift = ((rg.grid.heat_content() - before) / before).abs();
    assert!(drift <= 1e-6, "relative drift {drift}");
}

fn material(k: f64, c: f64) -> Material<f64> {
    Material {
        conductivity: k,
        heat_capacity: c,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn no_new_extremes_without_sources(
        seed_temps in prop::collection::vec(-20.0f64..40.0, 12 * 10),
        ks in prop::collection::vec(0.05f64..2.0, 12 * 10),
        dirichlet in any::<bool>(),
        outdoor in -20.0f64..40.0,
    ) {
        let mut grid = Grid::uniform(12, 10, 0.1, material(0.6, 1200.0), 0.0);
        for y in 0..10 {
            for x in 0..12 {
                grid.set_temp(x, y, seed_temps[y * 12 + x]);
                grid.set_material(x, y, material(ks[y * 12 + x], 3.0e4));
            }
        }
        if dirichlet {
            grid.clamp_ring(outdoor);
        }
        let lo = grid.temps().iter().copied().fold(f64::INFINITY, f64::min);
        let hi = grid.temps().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let dt = grid.stable_dt();
        for _ in 0..200 {
            grid.step(dt).unwrap();
        }
        for t in grid.temps() {
            prop_assert!(*t >= lo - 1e-9 && *t <= hi + 1e-9);
        }
    }
}

#[test]
fn exported_traces_round_trip_into_the_log() {
    let traces = default_traces();
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("trace.csv");
    let columns = export_trace(&traces, &csv).unwrap();
    assert_eq!(
        columns
            .iter()
            .map(|c| c.column.as_str())
            .collect::<Vec<_>>(),
        ["T1", "T2", "T3"]
    );

    let mut buf = Vec::new();
    write_traces(&traces, &mut buf).unwrap();
    assert_eq!(std::fs::read(&csv).unwrap(), buf);

    let (bus, log) = (Bus::new(), EventLog::open(dir.path().join("data")).unwrap());
    assert_eq!(
        load_sim_output(&csv, &columns, &bus, &log).unwrap(),
        3 * 468
    );
    // Loading twice replaces rather than appends.
    assert_eq!(
        load_sim_output(&csv, &columns, &bus, &log).unwrap(),
        3 * 468
    );
    for (trace, column) in traces.iter().zip(&columns) {
        let events = log.read_all(&column.topic).unwrap();
        assert_eq!(events.len(), 468);
        let mut prev = f64::NEG_INFINITY;
        for (event, (t, temp)) in events.iter().zip(&trace.samples) {
            assert_eq!(event.payload.number("measured_time"), Some(f64::from(*t)));
            let logged = event.payload.number("temperature").unwrap();
            assert_eq!(logged, *temp);
            assert!(logged >= prev);
            prev = logged;
        }
    }
    let direct = sim_messages(std::fs::File::open(&csv).unwrap(), &columns).unwrap();
    assert_eq!(direct.len(), 3 * 468);
}
