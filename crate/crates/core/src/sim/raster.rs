//! Forward-facing egocentric occupancy raster.

use super::world::*;
use super::ScenarioKind;
use crate::encoders::{Command, Observation, GRID_LEN, GRID_SIZE};

/// Metres per raster row (longitudinal).
pub const ROW_METRES: f64 = 2.0;
/// Metres per raster column (lateral).
pub const COL_METRES: f64 = 0.5;
/// Local x of the near edge of row 0. The view starts just behind the ego
/// centre, so vehicles approaching from behind stay invisible until alongside.
pub const VIEW_BACK: f64 = -8.0;
const VIEW_HALF_WIDTH: f64 = 0.5 * GRID_SIZE as f64 * COL_METRES;
const SUBSAMPLES: usize = 2;
const LANE_MARKING: f64 = 0.5;

const DRIVABLE: usize = 0;
const AGENTS: usize = 1;
const MARKINGS: usize = 2;

fn cell_index(channel: usize, row: usize, col: usize) -> usize {
    channel * GRID_SIZE * GRID_SIZE + row * GRID_SIZE + col
}

/// Local coordinates of a sub-sample point inside cell `(row, col)`.
fn sample_point(row: usize, col: usize, si: usize, sj: usize) -> (f64, f64) {
    let fx = (si as f64 + 0.5) / SUBSAMPLES as f64;
    let fy = (sj as f64 + 0.5) / SUBSAMPLES as f64;
    let lx = VIEW_BACK + (row as f64 + fx) * ROW_METRES;
    let ly = -VIEW_HALF_WIDTH + (col as f64 + fy) * COL_METRES;
    (lx, ly)
}

fn rasterize(world: &WorldState) -> Vec<f64> {
    let mut grid = vec![0.0; GRID_LEN];
    let pose = world.ego.pose;
    let weight = 1.0 / (SUBSAMPLES * SUBSAMPLES) as f64;
    let stop_line = match (world.road.stop_line, world.stop) {
        (Some(x), Some(s)) if !s.cleared => Some(x),
        _ => None,
    };
    let divider = world.road.left_lane.then_some(0.5 * LANE_WIDTH);
    for row in 0..GRID_SIZE {
        for col in 0..GRID_SIZE {
            let mut drivable = 0.0;
            let mut occupied = 0.0;
            let mut marking: f64 = 0.0;
            for si in 0..SUBSAMPLES {
                for sj in 0..SUBSAMPLES {
                    let (lx, ly) = sample_point(row, col, si, sj);
                    let [wx, wy] = pose.to_world(lx, ly);
                    if world.road.drivable(wx, wy) {
                        drivable += weight;
                    }
                    if world.agents.iter().any(|a| a.contains(wx, wy)) {
                        occupied += weight;
                    }
                }
            }
            // Markings use the cell footprint so thin lines are not missed.
            let (x0, y0) = (VIEW_BACK + row as f64 * ROW_METRES, -VIEW_HALF_WIDTH + col as f64 * COL_METRES);
            let centre = pose.to_world(x0 + 0.5 * ROW_METRES, y0 + 0.5 * COL_METRES);
            if let Some(line) = stop_line {
                let reach = 0.5 * (ROW_METRES + COL_METRES);
                if (centre[0] - line).abs() <= reach && centre[1].abs() <= 0.5 * LANE_WIDTH {
                    marking = 1.0;
                }
            }
            if let Some(d) = divider {
                if (centre[1] - d).abs() <= 0.5 * COL_METRES && world.road.drivable(centre[0], centre[1] - 0.5) {
                    marking = marking.max(LANE_MARKING);
                }
            }
            grid[cell_index(DRIVABLE, row, col)] = drivable;
            grid[cell_index(AGENTS, row, col)] = occupied;
            grid[cell_index(MARKINGS, row, col)] = marking;
        }
    }
    grid
}

/// Route-level navigation command for the current state.
pub fn navigation_command(world: &WorldState) -> Command {
    match world.kind {
        ScenarioKind::Merging | ScenarioKind::GiveWay => {
            if world.ego.pose.y < lane_center(1) - 0.5 {
                Command::ChangeLeft
            } else {
                Command::Follow
            }
        }
        ScenarioKind::Overtaking | ScenarioKind::EmergencyBrake => Command::Follow,
        ScenarioKind::TrafficSign => Command::Straight,
    }
}

/// Builds the policy observation: raster, speed, command and goal in the ego frame.
pub fn observe(world: &WorldState) -> Observation {
    let goal = world.ego.pose.to_local(world.goal[0], world.goal[1]);
    Observation {
        grid: rasterize(world),
        speed: world.ego.speed,
        command: navigation_command(world),
        goal,
    }
}
