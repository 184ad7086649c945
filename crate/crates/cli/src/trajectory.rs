//! Synthetic end-effector trajectories for accepted episodes.
//!
//! Each sub-task becomes a fixed phase sequence: approach above the contact point,
//! close the gripper, carry the source to the step's end position, open the gripper.
//! Actions are per-frame end-effector velocities, so motion starts and stops show
//! up as action-difference peaks; the gripper command ramps over three frames.

use vcage_core::assets::{AssetCatalog, Pose};
use vcage_core::compression::{CompressionError, TrajectoryRecord};
use vcage_core::math::Vec3;
use vcage_core::scene::SceneConfiguration;
use vcage_core::subtask::LIFT_HEIGHT;
use vcage_core::topview::{render_topview, PixelMapping, RasterError, TopViewRaster};

const RAMP: usize = 3;

/// Scene state before and after one executed step.
pub struct StepMotion {
    pub source_index: usize,
    pub contact: Vec3,
    pub before: SceneConfiguration,
    pub after: SceneConfiguration,
}

fn lerp(a: Vec3, b: Vec3, s: f64) -> Vec3 {
    [a[0] + (b[0] - a[0]) * s, a[1] + (b[1] - a[1]) * s, a[2] + (b[2] - a[2]) * s]
}

fn lifted(p: Vec3) -> Vec3 {
    [p[0], p[1], p[2] + LIFT_HEIGHT]
}

pub struct Synthesized {
    pub trajectory: TrajectoryRecord,
    pub frames: Vec<TopViewRaster>,
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Trajectory(#[from] CompressionError),
}

pub fn synthesize(
    steps: &[StepMotion],
    catalog: &AssetCatalog,
    mapping: &PixelMapping,
    frames_per_step: usize,
) -> Result<Synthesized, SynthError> {
    let approach = frames_per_step / 4;
    let carry = frames_per_step - approach - 2 * RAMP;
    let mut ee: Vec<Vec3> = Vec::new();
    let mut grip: Vec<f64> = Vec::new();
    let mut frames = Vec::new();
    let mut cur_ee = steps.first().map(|s| lifted(s.contact)).unwrap_or([0.0; 3]);

    for st in steps {
        let start_obj = *st.before.objects[st.source_index].pose();
        let end_obj = *st.after.objects[st.source_index].pose();
        let grasp_at = lifted(st.contact);
        // Offset from the gripper to the object's center, held during the carry.
        let hold = [
            start_obj.position[0] - grasp_at[0],
            start_obj.position[1] - grasp_at[1],
            start_obj.position[2] - grasp_at[2],
        ];
        let release_at = [
            end_obj.position[0] - hold[0],
            end_obj.position[1] - hold[1],
            end_obj.position[2] - hold[2],
        ];
        let mut state = st.before.clone();
        let mut push = |p: Vec3, g: f64, obj: Option<Pose>, state: &mut SceneConfiguration| -> Result<(), SynthError> {
            if let Some(pose) = obj {
                state
                    .set_pose(catalog, st.source_index, pose)
                    .expect("source index checked by the episode");
            }
            ee.push(p);
            grip.push(g);
            frames.push(render_topview(state, catalog, mapping)?);
            Ok(())
        };
        for k in 1..=approach {
            push(lerp(cur_ee, grasp_at, k as f64 / approach as f64), 0.0, None, &mut state)?;
        }
        for k in 1..=RAMP {
            push(grasp_at, k as f64 / RAMP as f64, None, &mut state)?;
        }
        for k in 1..=carry {
            let p = lerp(grasp_at, release_at, k as f64 / carry as f64);
            let held = Pose::new([p[0] + hold[0], p[1] + hold[1], p[2] + hold[2]], start_obj.orientation);
            push(p, 1.0, Some(held), &mut state)?;
        }
        for k in 1..=RAMP {
            let obj = (k == RAMP).then_some(end_obj);
            push(release_at, 1.0 - k as f64 / RAMP as f64, obj, &mut state)?;
        }
        cur_ee = release_at;
    }

    let actions: Vec<Vec<f64>> = (0..ee.len())
        .map(|t| {
            let prev = if t == 0 { ee[0] } else { ee[t - 1] };
            vec![ee[t][0] - prev[0], ee[t][1] - prev[1], ee[t][2] - prev[2]]
        })
        .collect();
    Ok(Synthesized { trajectory: TrajectoryRecord::new(actions, grip)?, frames })
}
