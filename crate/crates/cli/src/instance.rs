//! Oracle instance descriptions such as `grasp@A../.../..b` or
//! `place:2,1@A.b/...`.
//!
//! The part before `@` names the task (`grasp`, `hline`, `vline`,
//! `place:x,y`, `shapes:x,y;x,y;...`); the part after is the ASCII grid with
//! rows separated by `/`.

use anyhow::{anyhow, bail, Context, Result};
use archbuild::buildworld::{parse_ascii, Cell, EnvState, GridConfig, TaskSpec};

/// Horizon used for oracle instances; the oracles themselves ignore it.
pub const ORACLE_HORIZON: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub grid: GridConfig,
    pub task: TaskSpec,
    pub state: EnvState,
}

fn parse_cell(text: &str) -> Result<Cell> {
    let (x, y) = text
        .split_once(',')
        .ok_or_else(|| anyhow!("expected a cell as x,y, got {text:?}"))?;
    Ok(Cell::new(x.trim().parse()?, y.trim().parse()?))
}

fn parse_task(text: &str) -> Result<TaskSpec> {
    let (name, arg) = match text.split_once(':') {
        Some((n, a)) => (n, Some(a)),
        None => (text, None),
    };
    let task = match (name, arg) {
        ("grasp", None) => TaskSpec::Grasp,
        ("hline", None) => TaskSpec::HLine,
        ("vline", None) => TaskSpec::VLine,
        ("place", Some(a)) => TaskSpec::Place { target: parse_cell(a)? },
        ("shapes", Some(a)) => TaskSpec::Shapes {
            cells: a.split(';').map(parse_cell).collect::<Result<_>>()?,
        },
        ("place" | "shapes", None) => bail!("task {name:?} needs an argument, e.g. {name}:1,2"),
        _ => bail!("unknown task {text:?}"),
    };
    Ok(task)
}

pub fn parse_instance(text: &str) -> Result<Instance> {
    let (task, grid) = text
        .split_once('@')
        .ok_or_else(|| anyhow!("instance must look like <task>@<rows>, got {text:?}"))?;
    let task = parse_task(task.trim())?;
    let (width, height, state) = parse_ascii(grid.trim()).context("parsing instance grid")?;
    let grid = GridConfig::new(width, height, state.blocks.len(), ORACLE_HORIZON)?;
    task.validate(&grid)?;
    Ok(Instance { grid, task, state })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_grasp_and_place() {
        let i = parse_instance("grasp@A../.../..b").unwrap();
        assert_eq!((i.grid.width, i.grid.height, i.grid.n_blocks), (3, 3, 1));
        assert_eq!(i.state.agent, Cell::new(0, 0));
        assert_eq!(i.state.blocks[0].cell, Cell::new(2, 2));
        let p = parse_instance("place:1,0@A../b..").unwrap();
        assert_eq!(p.task, TaskSpec::Place { target: Cell::new(1, 0) });
    }

    #[test]
    fn rejects_malformed() {
        assert!(parse_instance("grasp").is_err());
        assert!(parse_instance("dig@A.").is_err());
        assert!(parse_instance("place@A.b").is_err());
        assert!(parse_instance("place:9,9@A.b").is_err());
    }
}
