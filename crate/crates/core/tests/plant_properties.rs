mod common;

use common::*;
use peristaltic_core::plant::{contact_check, ModuleKind, Plant, PlantParams, ValveMode};
use proptest::prelude::*;

fn mode() -> impl Strategy<Value = ValveMode> {
    prop_oneof![Just(ValveMode::Inflate), Just(ValveMode::Hold), Just(ValveMode::Deflate)]
}

/// `(module id, mode, ticks to run afterwards)`
fn schedule() -> impl Strategy<Value = Vec<(u32, ValveMode, u32)>> {
    prop::collection::vec((1u32..=5, mode(), 1u32..800), 1..25)
}

fn plant(ratio: f64) -> Plant {
    Plant::new(layout(5), PlantParams::default(), material(), Some(object(ratio, 96.0))).unwrap()
}

fn run(plant: &mut Plant, schedule: &[(u32, ValveMode, u32)], dt: f64, mut check: impl FnMut(&Plant)) {
    for &(id, mode, ticks) in schedule {
        plant.set_valve(id, mode).unwrap();
        for _ in 0..ticks {
            plant.step(dt).unwrap();
            check(plant);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn state_stays_within_bounds(ratio in 0.4f64..0.8, schedule in schedule()) {
        let mut p = plant(ratio);
        let p_max = p.params().p_max_kpa;
        run(&mut p, &schedule, DT, |p| {
            let state = p.state();
            for (i, (m, c)) in p.layout().modules().iter().zip(&state.chambers).enumerate() {
                assert!(c.pressure >= 0.0 && c.pressure <= p_max, "{c:?}");
                let d_max = p.max_inflation(m.id).unwrap();
                assert!(c.inflation >= 0.0 && c.inflation <= d_max + 1e-12, "{c:?}");
                if c.in_contact {
                    assert_eq!(m.kind, ModuleKind::Compression);
                }
                if let Some(obj) = &state.object {
                    assert!(obj.z >= 0.0);
                    if obj.supporters.contains(&m.id) {
                        assert!(contact_check(m, state.z_origins[i], c, obj));
                    }
                }
            }
        });
    }

    #[test]
    fn identical_inputs_give_identical_states(ratio in 0.4f64..0.8, schedule in schedule()) {
        let (mut a, mut b) = (plant(ratio), plant(ratio));
        run(&mut a, &schedule, DT, |_| {});
        run(&mut b, &schedule, DT, |_| {});
        prop_assert_eq!(a.state(), b.state());
    }

    #[test]
    fn halving_dt_changes_pressure_by_at_most_one_step(ratio in 0.4f64..0.8, schedule in schedule()) {
        let (mut coarse, mut fine) = (plant(ratio), plant(ratio));
        run(&mut coarse, &schedule, DT, |_| {});
        let doubled: Vec<_> = schedule.iter().map(|&(id, m, n)| (id, m, 2 * n)).collect();
        run(&mut fine, &doubled, DT / 2.0, |_| {});
        let params = PlantParams::default();
        let bound = params.contact_rate(0.8).max(params.k_vent) * DT * schedule.len() as f64;
        for (c, f) in coarse.state().chambers.iter().zip(&fine.state().chambers) {
            prop_assert!((c.pressure - f.pressure).abs() <= bound, "{} vs {}", c.pressure, f.pressure);
        }
    }
}
