//! Built-in single-stroke typeface.
//!
//! Glyphs are polylines on a small grid: x in 0..=4, y from the descender
//! (-2) to the cap height (6), baseline at 0 and x-height at 4. Each point
//! is two digits: `x` and `y + 2`. Polylines are separated by spaces.
//! Characters without a design get a procedurally composed square glyph,
//! which is how CJK and other scripts are covered.

use super::Coverage;

pub const UNITS_PER_EM: f32 = 8.0;
pub const ASCENT_UNITS: f32 = 6.0;

fn design(ch: char) -> Option<&'static str> {
    Some(match ch {
        'A' => "022842 1434",
        'B' => "02083847463505 3544433202",
        'C' => "4738180703123243",
        'D' => "02082846442202",
        'E' => "48080242 0535",
        'F' => "480802 0535",
        'G' => "47381807031232434525",
        'H' => "0208 4248 0545",
        'I' => "1838 2822 1232",
        'J' => "4843321203",
        'K' => "0208 4804 1542",
        'L' => "080242",
        'M' => "0208254842",
        'N' => "02084248",
        'O' => "183847433212030718",
        'P' => "02083847463505",
        'Q' => "183847433212030718 2442",
        'R' => "02083847463505 3542",
        'S' => "473818070615354443321203",
        'T' => "0848 2822",
        'U' => "080312324348",
        'V' => "082248",
        'W' => "0812253248",
        'X' => "0842 0248",
        'Y' => "082548 2522",
        'Z' => "08480242",
        'a' => "4642 4536160503123243",
        'b' => "0802 0516364543321203",
        'c' => "4536160503123243",
        'd' => "4842 4536160503123243",
        'e' => "04444536160503123243",
        'f' => "4738281712 0636",
        'g' => "4641301001 4536160503123243",
        'h' => "0802 0516364542",
        'i' => "2622 28",
        'j' => "3631201001 38",
        'k' => "0802 3603 1432",
        'l' => "18132232",
        'm' => "0602 05162522 25364542",
        'n' => "0602 0516364542",
        'o' => "163645433212030516",
        'p' => "0600 0516364543321203",
        'q' => "4640 4536160503123243",
        'r' => "0602 05163645",
        's' => "45361605143443321203",
        't' => "17132232 0636",
        'u' => "0603123243 4642",
        'v' => "062246",
        'w' => "0612243246",
        'x' => "0642 0246",
        'y' => "0622 4610",
        'z' => "06464202",
        '0' => "183847433212030718 1347",
        '1' => "172822 1232",
        '2' => "07183847460242",
        '3' => "07183847463525 354443321203",
        '4' => "32380444",
        '5' => "480806364543321203",
        '6' => "473818070312324344351504",
        '7' => "084822",
        '8' => "183847463515060718 1504031232434435",
        '9' => "031232434738180706153546",
        '.' => "22",
        ',' => "2211",
        '!' => "2824 22",
        '?' => "0718384746352524 22",
        '-' => "1535",
        '+' => "0545 2327",
        '\'' => "2826",
        '"' => "1816 3836",
        ':' => "26 22",
        ';' => "26 2211",
        '(' => "382716142332",
        ')' => "182736342312",
        '/' => "0248",
        '=' => "1434 1636",
        '_' => "0040",
        '[' => "38282232",
        ']' => "18282212",
        '<' => "470543",
        '>' => "074503",
        _ => return None,
    })
}

type Point = (f32, f32);

#[derive(Debug, Clone)]
struct Glyph {
    strokes: Vec<Vec<Point>>,
    width: f32,
}

/// Latin letters with diacritics: base design plus a mark polyline.
fn decompose(ch: char) -> Option<(char, &'static str)> {
    const ACUTE: &str = "2738";
    const GRAVE: &str = "1827";
    const CIRC: &str = "172837";
    const DIAER: &str = "18 38";
    const CAP_MARK: &str = "1939";
    Some(match ch {
        'á' => ('a', ACUTE),
        'à' => ('a', GRAVE),
        'â' => ('a', CIRC),
        'ä' => ('a', DIAER),
        'é' => ('e', ACUTE),
        'è' => ('e', GRAVE),
        'ê' => ('e', CIRC),
        'ë' => ('e', DIAER),
        'î' => ('i', CIRC),
        'ï' => ('i', DIAER),
        'ô' => ('o', CIRC),
        'ö' => ('o', DIAER),
        'ù' => ('u', GRAVE),
        'û' => ('u', CIRC),
        'ü' => ('u', DIAER),
        'ç' => ('c', "222110"),
        'É' => ('E', CAP_MARK),
        'È' => ('E', CAP_MARK),
        'À' => ('A', CAP_MARK),
        'Ô' => ('O', CAP_MARK),
        _ => return None,
    })
}

fn lookup(ch: char) -> Option<Glyph> {
    if let Some(src) = design(ch) {
        return Some(parse_design(src));
    }
    let (base, mark) = decompose(ch)?;
    let mut g = parse_design(design(base)?);
    // 'i' loses its dot under a mark
    if base == 'i' {
        g.strokes.retain(|s| s.len() > 1);
    }
    g.strokes.extend(parse_design(mark).strokes);
    Some(g)
}

fn parse_design(src: &str) -> Glyph {
    let strokes: Vec<Vec<Point>> = src
        .split(' ')
        .map(|run| {
            run.as_bytes()
                .chunks(2)
                .map(|p| ((p[0] - b'0') as f32, (p[1] - b'0') as f32 - 2.0))
                .collect()
        })
        .collect();
    Glyph { strokes, width: 4.0 }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Square glyph assembled from hashed strokes on a 4×4 lattice spanning
/// 6×6 units. Always carries at least one horizontal and one vertical stroke.
fn procedural(ch: char) -> Glyph {
    const CANDIDATES: [[(f32, f32); 2]; 16] = [
        [(0.0, 6.0), (6.0, 6.0)],
        [(0.0, 4.0), (6.0, 4.0)],
        [(1.0, 2.0), (5.0, 2.0)],
        [(0.0, 0.0), (6.0, 0.0)],
        [(0.0, 6.0), (0.0, 0.0)],
        [(2.0, 6.0), (2.0, 0.0)],
        [(4.0, 6.0), (4.0, 0.0)],
        [(6.0, 6.0), (6.0, 0.0)],
        [(0.0, 6.0), (6.0, 0.0)],
        [(6.0, 6.0), (0.0, 0.0)],
        [(3.0, 6.0), (0.0, 2.0)],
        [(3.0, 6.0), (6.0, 2.0)],
        [(0.0, 3.0), (3.0, 3.0)],
        [(3.0, 3.0), (6.0, 3.0)],
        [(1.0, 5.0), (2.0, 4.0)],
        [(5.0, 1.0), (6.0, 0.0)],
    ];
    let h = splitmix(ch as u64);
    let row = (h % 4) as usize;
    let col = 4 + ((h >> 2) % 4) as usize;
    let mut picked = vec![row, col];
    let extra = 2 + ((h >> 4) % 3) as usize;
    let mut bits = splitmix(h);
    while picked.len() < 2 + extra {
        let k = (bits % 16) as usize;
        bits = splitmix(bits);
        if !picked.contains(&k) {
            picked.push(k);
        }
    }
    let strokes = picked.into_iter().map(|k| CANDIDATES[k].to_vec()).collect();
    Glyph { strokes, width: 6.0 }
}

/// A stroke face parameterised by weight, horizontal scale and serifs.
#[derive(Debug, Clone)]
pub struct StrokeFace {
    pub name: String,
    /// Stroke width in grid units.
    pub weight: f32,
    pub width_scale: f32,
    pub serif: bool,
}

impl StrokeFace {
    pub fn new(name: impl Into<String>, weight: f32, width_scale: f32, serif: bool) -> Self {
        Self {
            name: name.into(),
            weight,
            width_scale,
            serif,
        }
    }

    pub fn standard() -> Self {
        Self::new("stroke-standard", 0.8, 1.0, false)
    }

    pub fn has_design(ch: char) -> bool {
        ch == ' ' || lookup(ch).is_some()
    }

    fn glyph(&self, ch: char) -> Glyph {
        let mut g = lookup(ch).unwrap_or_else(|| procedural(ch));
        if self.serif {
            let mut ticks = Vec::new();
            for s in &g.strokes {
                for &(x, y) in [s.first(), s.last()].into_iter().flatten() {
                    if s.len() > 1 && (y == 0.0 || y == 4.0 || y == 6.0) {
                        ticks.push(vec![(x - 0.6, y), (x + 0.6, y)]);
                    }
                }
            }
            g.strokes.extend(ticks);
        }
        for s in &mut g.strokes {
            for p in s.iter_mut() {
                p.0 *= self.width_scale;
            }
        }
        g.width *= self.width_scale;
        g
    }

    fn spacing(&self) -> f32 {
        0.6 + 0.5 * self.weight
    }

    /// Horizontal advance of `ch` in grid units.
    pub fn advance_units(&self, ch: char) -> f32 {
        if ch == ' ' {
            return 3.0 * self.width_scale;
        }
        self.glyph(ch).width + self.spacing()
    }

    /// Draws `ch` with its origin (left edge, baseline) at pixel position
    /// (`ox`, `baseline`). Returns the advance in pixels.
    pub fn draw_char(&self, cov: &mut Coverage, ch: char, ox: f32, baseline: f32, em_px: f32) -> f32 {
        let unit = em_px / UNITS_PER_EM;
        if ch == ' ' {
            return self.advance_units(ch) * unit;
        }
        let g = self.glyph(ch);
        let half = (self.weight * unit / 2.0).max(0.5);
        let pad = half + 1.0;
        for stroke in &g.strokes {
            let pts: Vec<Point> = stroke
                .iter()
                .map(|&(x, y)| (ox + (x + self.weight / 2.0) * unit, baseline - y * unit))
                .collect();
            let segs: Vec<(Point, Point)> = if pts.len() == 1 {
                vec![(pts[0], pts[0])]
            } else {
                pts.windows(2).map(|w| (w[0], w[1])).collect()
            };
            for (a, b) in segs {
                let x0 = (a.0.min(b.0) - pad).floor().max(0.0) as usize;
                let x1 = ((a.0.max(b.0) + pad).ceil() as usize).min(cov.width);
                let y0 = (a.1.min(b.1) - pad).floor().max(0.0) as usize;
                let y1 = ((a.1.max(b.1) + pad).ceil() as usize).min(cov.height);
                for py in y0..y1 {
                    for px in x0..x1 {
                        let d = segment_distance((px as f32 + 0.5, py as f32 + 0.5), a, b);
                        let c = (half + 0.5 - d).clamp(0.0, 1.0);
                        if c > 0.0 {
                            let i = py * cov.width + px;
                            if c > cov.data[i] {
                                cov.data[i] = c;
                            }
                        }
                    }
                }
            }
        }
        (g.width + self.spacing()) * unit
    }
}

fn segment_distance(p: Point, a: Point, b: Point) -> f32 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}
