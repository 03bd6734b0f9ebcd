use std::sync::Arc;

use nudge_core::controllers::TrackerConfig;
use nudge_core::geometry::{vehicle_to_world, world_to_vehicle, Point2, Pose2D};
use nudge_core::learn::{bc_train, RolloutSetup, TrainConfig};
use nudge_core::planner::{apply_offsets, Frame, HorizonTrajectory, PlanningConfig};
use nudge_core::track::{shapes::oval, Raceline};
use nudge_core::vehicle_sim::{Env, OccupancyGrid, SimConfig, VehicleState};
use proptest::prelude::*;

fn pose() -> impl Strategy<Value = VehicleState> {
    (-50.0..50.0f64, -50.0..50.0f64, -10.0..10.0f64).prop_map(|(x, y, theta)| VehicleState {
        x,
        y,
        theta,
        ..Default::default()
    })
}

fn horizon() -> impl Strategy<Value = HorizonTrajectory> {
    proptest::collection::vec((-30.0..30.0f64, -30.0..30.0f64), 10).prop_map(|pts| HorizonTrajectory {
        points: pts.into_iter().map(|(x, y)| Point2::new(x, y)).collect(),
        speeds: vec![2.0; 10],
        frame: Frame::World,
    })
}

fn close(a: Point2, b: Point2) -> bool {
    a.distance(b) < 1e-9
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn world_vehicle_round_trip(state in pose(), h in horizon()) {
        let p = state.pose();
        let back = vehicle_to_world(&p, &world_to_vehicle(&p, &h.points));
        for (a, b) in back.iter().zip(&h.points) {
            prop_assert!(close(*a, *b));
        }
    }

    #[test]
    fn zero_offsets_are_the_identity(state in pose(), h in horizon()) {
        let m = apply_offsets(&h, &state, &[0.0; 10]).unwrap();
        for (a, b) in m.points.iter().zip(&h.points) {
            prop_assert!(close(*a, *b));
        }
    }

    #[test]
    fn offsets_commute_with_rigid_motions(
        state in pose(),
        h in horizon(),
        offsets in proptest::collection::vec(-1.0..1.0f64, 10),
        motion in (-20.0..20.0f64, -20.0..20.0f64, -4.0..4.0f64),
    ) {
        let g = Pose2D::new(motion.0, motion.1, motion.2);
        let moved_state = {
            let p = g.to_world(state.position());
            VehicleState { x: p.x, y: p.y, theta: state.theta + motion.2, ..state }
        };
        let moved = HorizonTrajectory { points: vehicle_to_world(&g, &h.points), ..h.clone() };
        let a = apply_offsets(&moved, &moved_state, &offsets).unwrap();
        let b = apply_offsets(&h, &state, &offsets).unwrap();
        for (pa, pb) in a.points.iter().zip(vehicle_to_world(&g, &b.points)) {
            prop_assert!(pa.distance(pb) < 1e-8);
        }
        // each point moves by exactly |o_i|
        for ((pb, p), o) in b.points.iter().zip(&h.points).zip(&offsets) {
            prop_assert!((pb.distance(*p) - o.abs()).abs() < 1e-9);
        }
    }
}

#[test]
fn bc_training_is_deterministic() {
    let track = oval(8.0, 3.0, 1.1, 0.1).unwrap();
    let line = Raceline::from_positions(&track.centers, true, 2.0, 3.0).unwrap();
    let grid = OccupancyGrid::from_centerline(&track, 0.05, 0.5).unwrap();
    let setup = RolloutSetup {
        env: Env::new(Arc::new(grid), Arc::new(line), SimConfig::default()).unwrap(),
        planning: PlanningConfig::default(),
        tracker: TrackerConfig::default(),
    };
    let cfg = TrainConfig {
        total_timesteps: 1024,
        num_envs: 2,
        rollout_steps: 256,
        minibatch_size: 128,
        seed: 9,
        ..TrainConfig::default()
    };
    let a = bc_train(&setup, &cfg, None, &mut |_, _| Ok(())).unwrap();
    let b = bc_train(&setup, &cfg, None, &mut |_, _| Ok(())).unwrap();
    assert_eq!(a.losses, b.losses);
    assert_eq!(a.returns, b.returns);
    assert_eq!(a.policy, b.policy);
    assert!(a.losses.last().unwrap().1 < a.losses[0].1);
}
