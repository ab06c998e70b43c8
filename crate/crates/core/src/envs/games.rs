use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Float;

pub const GRID: usize = 12;
const LAST: usize = GRID - 1;

pub const AGENT: Float = 1.0;
/// Each object class has its own gray level.
pub const BALL: Float = 0.5;
pub const FRUIT: Float = 0.75;
pub const OBSTACLE: Float = 0.25;

/// Single-frame game logic; stacking and validation live in the wrapper.
pub trait Game: Send {
    fn reset(&mut self, rng: &mut ChaCha8Rng);
    /// Advances one tick; returns `(reward, terminal)`.
    fn tick(&mut self, action: usize, rng: &mut ChaCha8Rng) -> (Float, bool);
    /// Writes the current frame into a row-major `GRID × GRID` buffer.
    fn render(&self, frame: &mut [Float]);
    fn max_steps(&self) -> usize;
}

fn shift(pos: usize, action: usize, lo: usize, hi: usize) -> usize {
    match action {
        1 if pos > lo => pos - 1,
        2 if pos < hi => pos + 1,
        _ => pos,
    }
}

fn put(frame: &mut [Float], row: usize, col: usize, v: Float) {
    let cell = &mut frame[row * GRID + col];
    *cell = cell.max(v);
}

/// Paddle of height 3 in column 0 against a reflecting right wall.
///
/// A returned ball scores +1, a missed ball −1 and is re-served from the
/// right wall aimed past the paddle. First side to 5 ends the episode.
#[derive(Debug, Clone, Default)]
pub struct Pong {
    pub paddle: usize,
    pub ball: (usize, usize),
    pub velocity: (isize, isize),
    pub returns: u32,
    pub misses: u32,
}

impl Pong {
    pub const PADDLE: usize = 3;
    pub const POINTS: u32 = 5;

    fn covers(&self, row: usize) -> bool {
        (self.paddle..self.paddle + Self::PADDLE).contains(&row)
    }

    fn bounce_row(row: usize, dy: isize) -> (usize, isize) {
        let next = row as isize + dy;
        if next < 0 {
            (1, 1)
        } else if next > LAST as isize {
            (LAST - 1, -1)
        } else {
            (next as usize, dy)
        }
    }

    /// Row where a ball served from `(row, LAST)` with slope `dy` reaches column 0.
    fn landing(mut row: usize, mut dy: isize) -> usize {
        for _ in 0..LAST {
            (row, dy) = Self::bounce_row(row, dy);
        }
        row
    }

    fn serve(&mut self, rng: &mut ChaCha8Rng) {
        let mut options = Vec::new();
        for row in 0..GRID {
            for dy in [-1, 1] {
                if !self.covers(Self::landing(row, dy)) {
                    options.push((row, dy));
                }
            }
        }
        let (row, dy) = options[rng.random_range(0..options.len())];
        self.ball = (row, LAST);
        self.velocity = (dy, -1);
    }
}

impl Game for Pong {
    fn reset(&mut self, rng: &mut ChaCha8Rng) {
        self.paddle = rng.random_range(0..=GRID - Self::PADDLE);
        self.returns = 0;
        self.misses = 0;
        self.serve(rng);
    }

    fn tick(&mut self, action: usize, rng: &mut ChaCha8Rng) -> (Float, bool) {
        self.paddle = shift(self.paddle, action, 0, GRID - Self::PADDLE);
        let (row, dy) = Self::bounce_row(self.ball.0, self.velocity.0);
        let col = (self.ball.1 as isize + self.velocity.1) as usize;
        self.ball = (row, col);
        self.velocity.0 = dy;
        let mut reward = 0.0;
        if col == 0 {
            if self.covers(row) {
                reward = 1.0;
                self.returns += 1;
                self.velocity = ([-1, 1][rng.random_range(0..2)], 1);
            } else {
                reward = -1.0;
                self.misses += 1;
                self.serve(rng);
            }
        } else if col == LAST {
            self.velocity.1 = -1;
        }
        let done = self.returns >= Self::POINTS || self.misses >= Self::POINTS;
        (reward, done)
    }

    fn render(&self, frame: &mut [Float]) {
        frame.fill(0.0);
        put(frame, self.ball.0, self.ball.1, BALL);
        for r in self.paddle..self.paddle + Self::PADDLE {
            put(frame, r, 0, AGENT);
        }
    }

    fn max_steps(&self) -> usize {
        // at most 9 points, each taking at most one round trip
        (2 * Self::POINTS as usize - 1) * 2 * LAST
    }
}

/// One-cell paddle on the bottom row catching objects that fall one row per tick.
#[derive(Debug, Clone, Default)]
pub struct Catch {
    pub paddle: usize,
    pub object: (usize, usize),
    pub drops: u32,
}

impl Catch {
    pub const DROPS: u32 = 50;

    fn spawn(&mut self, rng: &mut ChaCha8Rng) {
        self.object = (0, rng.random_range(0..GRID));
    }
}

impl Game for Catch {
    fn reset(&mut self, rng: &mut ChaCha8Rng) {
        self.paddle = rng.random_range(0..GRID);
        self.drops = 0;
        self.spawn(rng);
    }

    fn tick(&mut self, action: usize, rng: &mut ChaCha8Rng) -> (Float, bool) {
        self.paddle = shift(self.paddle, action, 0, LAST);
        self.object.0 += 1;
        if self.object.0 < LAST {
            return (0.0, false);
        }
        let reward = if self.object.1 == self.paddle { 1.0 } else { -1.0 };
        self.drops += 1;
        self.spawn(rng);
        (reward, self.drops >= Self::DROPS)
    }

    fn render(&self, frame: &mut [Float]) {
        frame.fill(0.0);
        put(frame, self.object.0, self.object.1, FRUIT);
        put(frame, LAST, self.paddle, AGENT);
    }

    fn max_steps(&self) -> usize {
        Self::DROPS as usize * LAST
    }
}

/// A car on the bottom row dodging obstacles that scroll down one row per tick.
///
/// Each tick the car moves, obstacles advance, then a collision ends the
/// episode with −1. Surviving a tick earns +0.01.
#[derive(Debug, Clone, Default)]
pub struct Avoid {
    pub car: usize,
    /// Obstacle column per row, `None` for an empty row.
    pub rows: [Option<usize>; GRID],
}

impl Avoid {
    pub const SPAWN_PROBABILITY: f64 = 0.4;
    pub const CAP: usize = 500;
    pub const SURVIVAL: Float = 0.01;

    fn spawn(rng: &mut ChaCha8Rng) -> Option<usize> {
        rng.random_bool(Self::SPAWN_PROBABILITY).then(|| rng.random_range(0..GRID))
    }
}

impl Game for Avoid {
    fn reset(&mut self, rng: &mut ChaCha8Rng) {
        self.car = rng.random_range(0..GRID);
        self.rows = [None; GRID];
        // pre-populate the upper half so the first frame is informative
        for r in 0..GRID / 2 {
            self.rows[r] = Self::spawn(rng);
        }
    }

    fn tick(&mut self, action: usize, rng: &mut ChaCha8Rng) -> (Float, bool) {
        self.car = shift(self.car, action, 0, LAST);
        self.rows.copy_within(0..LAST, 1);
        self.rows[0] = Self::spawn(rng);
        if self.rows[LAST] == Some(self.car) {
            (-1.0, true)
        } else {
            (Self::SURVIVAL, false)
        }
    }

    fn render(&self, frame: &mut [Float]) {
        frame.fill(0.0);
        for (r, c) in self.rows.iter().enumerate() {
            if let Some(c) = c {
                put(frame, r, *c, OBSTACLE);
            }
        }
        put(frame, LAST, self.car, AGENT);
    }

    fn max_steps(&self) -> usize {
        Self::CAP
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn pong_serve_misses_current_paddle() {
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut g = Pong::default();
            g.reset(&mut rng);
            let landing = Pong::landing(g.ball.0, g.velocity.0);
            assert!(!g.covers(landing));
        }
    }

    #[test]
    fn pong_bounce_stays_in_grid() {
        for row in 0..GRID {
            for dy in [-1, 1] {
                let (r, d) = Pong::bounce_row(row, dy);
                assert!(r < GRID);
                assert!(d == -1 || d == 1);
            }
        }
    }

    #[test]
    fn catch_impact_under_object_rewards() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g = Catch::default();
        g.reset(&mut rng);
        g.paddle = g.object.1;
        let mut last = (0.0, false);
        for _ in 0..LAST {
            last = g.tick(0, &mut rng);
        }
        assert_eq!(last, (1.0, false));
        assert_eq!(g.drops, 1);
    }

    #[test]
    fn avoid_crash_terminates() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g = Avoid::default();
        g.reset(&mut rng);
        g.car = 5;
        g.rows = [None; GRID];
        g.rows[LAST - 1] = Some(6);
        // drive right into the obstacle's column
        assert_eq!(g.tick(2, &mut rng), (-1.0, true));
    }
}
