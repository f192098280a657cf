//! Recorded episode frames and their text / pixmap renderings.
//!
//! Legend: `.` empty tile (dirt or an exhausted source), `:` source holding
//! some food, `#` source at capacity, `0`-`9` an agent of that founder family
//! (modulo 10).

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{TileKind, World};

pub const FRAMES_FORMAT: &str = "evolab-frames";
pub const FRAMES_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub tick: u64,
    pub width: u32,
    pub height: u32,
    /// One string of glyphs per row, north first.
    pub rows: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

impl Frame {
    pub fn capture(world: &World) -> Frame {
        let cap = world.config().food_capacity;
        let mut rows = Vec::with_capacity(world.height() as usize);
        for y in 0..world.height() {
            let mut row = String::with_capacity(world.width() as usize);
            for x in 0..world.width() {
                let tile = world.tile(x, y);
                let glyph = match tile.occupant.and_then(|id| world.agent(id)) {
                    Some(a) => char::from_digit(a.genome.dominant_allele() % 10, 10).unwrap_or('?'),
                    None if tile.kind == TileKind::FoodSource && tile.food >= cap => '#',
                    None if tile.food > 0.0 => ':',
                    None => '.',
                };
                row.push(glyph);
            }
            rows.push(row);
        }
        Frame {
            tick: world.tick(),
            width: world.width(),
            height: world.height(),
            rows,
        }
    }
}

/// Writes frames as JSON lines after a format header line.
pub fn write_frames<W: Write>(frames: &[Frame], mut out: W) -> Result<()> {
    let header = Header {
        format: FRAMES_FORMAT.into(),
        version: FRAMES_VERSION,
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for f in frames {
        serde_json::to_writer(&mut out, f)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_frames<R: BufRead>(input: R) -> Result<Vec<Frame>> {
    let mut lines = input.lines();
    let first = lines.next().ok_or_else(|| Error::Format("empty frame log".into()))??;
    let header: Header =
        serde_json::from_str(&first).map_err(|e| Error::Format(format!("bad frame log header: {e}")))?;
    if header.format != FRAMES_FORMAT || header.version != FRAMES_VERSION {
        return Err(Error::Format(format!(
            "expected {FRAMES_FORMAT} v{FRAMES_VERSION}, found {} v{}",
            header.format, header.version
        )));
    }
    let mut frames = Vec::new();
    for line in lines {
        let line = line?;
        if !line.trim().is_empty() {
            frames.push(serde_json::from_str(&line)?);
        }
    }
    Ok(frames)
}

pub fn render_text(frame: &Frame) -> String {
    let mut s = format!("tick {}\n", frame.tick);
    for row in &frame.rows {
        s.push_str(row);
        s.push('\n');
    }
    s
}

const FAMILY_COLOURS: [[u8; 3]; 10] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
];

fn colour(glyph: char) -> [u8; 3] {
    match glyph {
        '.' => [235, 225, 200],
        ':' => [150, 200, 120],
        '#' => [40, 120, 40],
        d => d.to_digit(10).map_or([0, 0, 0], |k| FAMILY_COLOURS[k as usize]),
    }
}

/// Glyph, pixmap colour and meaning for every symbol a frame can contain.
pub fn legend() -> Vec<(char, [u8; 3], String)> {
    let mut out = vec![
        ('.', colour('.'), "empty tile".to_string()),
        (':', colour(':'), "food source below capacity".to_string()),
        ('#', colour('#'), "food source at capacity".to_string()),
    ];
    for k in 0..10u32 {
        let d = char::from_digit(k, 10).expect("digit");
        out.push((d, colour(d), format!("agent of family {k}")));
    }
    out
}

/// Binary PPM (P6) of the frame with `cell` pixels per tile.
pub fn render_ppm(frame: &Frame, cell: u32) -> Result<Vec<u8>> {
    if cell == 0 {
        return Err(Error::Config("cell size must be at least 1".into()));
    }
    let (w, h) = (frame.width * cell, frame.height * cell);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve((w * h * 3) as usize);
    for row in &frame.rows {
        let colours: Vec<[u8; 3]> = row.chars().map(colour).collect();
        for _ in 0..cell {
            for c in &colours {
                for _ in 0..cell {
                    out.extend_from_slice(c);
                }
            }
        }
    }
    Ok(out)
}
