//! Scripted observation-based policies, one per game.

use super::games::{AGENT, BALL, FRUIT, GRID, OBSTACLE};
use super::EnvKind;
use crate::tensor::{Float, Tensor};

const LAST: usize = GRID - 1;

fn cells(frame: &[Float], value: Float) -> impl Iterator<Item = (usize, usize)> + '_ {
    frame
        .iter()
        .enumerate()
        .filter(move |(_, v)| **v == value)
        .map(|(i, _)| (i / GRID, i % GRID))
}

fn toward(from: usize, to: usize) -> usize {
    match from.cmp(&to) {
        std::cmp::Ordering::Greater => 1,
        std::cmp::Ordering::Less => 2,
        std::cmp::Ordering::Equal => 0,
    }
}

/// Greedy hand-written action for `kind` given a stacked observation.
pub fn oracle_action(kind: EnvKind, observation: &Tensor) -> usize {
    let data = observation.data();
    let n = GRID * GRID;
    let (older, newer) = data[data.len() - 2 * n..].split_at(n);
    match kind {
        EnvKind::Pong => pong(older, newer),
        EnvKind::Catch => catch(newer),
        EnvKind::Avoid => avoid(newer),
    }
}

fn pong(older: &[Float], newer: &[Float]) -> usize {
    let paddle: Vec<usize> = cells(newer, AGENT).filter(|&(_, c)| c == 0).map(|(r, _)| r).collect();
    let Some(&top) = paddle.first() else { return 0 };
    let center = top + paddle.len() / 2;
    let Some((row, col)) = cells(newer, BALL).next() else { return 0 };
    let target = match cells(older, BALL).next() {
        Some((r0, c0)) if c0 > col => {
            let mut dy = row as isize - r0 as isize;
            let mut r = row as isize;
            for _ in 0..col {
                r += dy;
                if r < 0 {
                    r = 1;
                    dy = 1;
                } else if r > LAST as isize {
                    r = LAST as isize - 1;
                    dy = -1;
                }
            }
            r as usize
        }
        _ => row,
    };
    toward(center, target)
}

fn catch(newer: &[Float]) -> usize {
    let paddle = cells(newer, AGENT).find(|&(r, _)| r == LAST).map(|(_, c)| c);
    let object = cells(newer, FRUIT).next().map(|(_, c)| c);
    match (paddle, object) {
        (Some(p), Some(o)) => toward(p, o),
        _ => 0,
    }
}

fn avoid(newer: &[Float]) -> usize {
    let Some(car) = cells(newer, AGENT).find(|&(r, _)| r == LAST).map(|(_, c)| c) else {
        return 0;
    };
    let danger = cells(newer, OBSTACLE).find(|&(r, _)| r == LAST - 1).map(|(_, c)| c);
    if danger != Some(car) {
        return 0;
    }
    if car == 0 {
        2
    } else if car == LAST {
        1
    } else {
        toward(car, GRID / 2).max(1)
    }
}
