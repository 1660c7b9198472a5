//! Frame rendering: plain-text rows for terminals and standalone SVG
//! drawings, one frame per configuration.

use std::fmt::Write as _;

use crate::particle::{Particle, ParticleState};
use crate::scheduler::Configuration;

fn glyph(p: &Particle) -> char {
    if p.faulty {
        return 'X';
    }
    match p.state {
        ParticleState::Init => 'I',
        ParticleState::Starting => 's',
        ParticleState::Marker => 'M',
        ParticleState::NofaultyLeader => '*',
        ParticleState::Notified => 'N',
        ParticleState::PreExplorer => 'e',
        ParticleState::Explorer => 'E',
        ParticleState::PreMarker => 'm',
        ParticleState::Candidate => 'C',
        ParticleState::Slave => 'S',
        ParticleState::Leader => 'L',
        ParticleState::Follower => 'F',
        ParticleState::Probe => 'P',
        ParticleState::Collector => 'K',
        ParticleState::CollectorCounting => 'k',
        ParticleState::CollectorDone => 'D',
        ParticleState::Opposer => 'O',
    }
}

fn color(p: &Particle) -> &'static str {
    if p.faulty {
        return "#444444";
    }
    match p.state {
        ParticleState::Init => "#b0bec5",
        ParticleState::Starting => "#90a4ae",
        ParticleState::Marker => "#e53935",
        ParticleState::NofaultyLeader => "#ffd600",
        ParticleState::Notified => "#26c6da",
        ParticleState::PreExplorer => "#ffb300",
        ParticleState::Explorer => "#fb8c00",
        ParticleState::PreMarker => "#f4511e",
        ParticleState::Candidate => "#8e24aa",
        ParticleState::Slave => "#78909c",
        ParticleState::Leader => "#fdd835",
        ParticleState::Follower => "#43a047",
        ParticleState::Probe => "#1e88e5",
        ParticleState::Collector => "#5e35b1",
        ParticleState::CollectorCounting => "#3949ab",
        ParticleState::CollectorDone => "#00897b",
        ParticleState::Opposer => "#d81b60",
    }
}

/// Text frame: one line per row, top row first. Expanded particles show
/// their glyph at the head and a dot at the tail.
pub fn text_frame(config: &Configuration) -> String {
    let nodes: Vec<(i32, i32, char)> = config
        .particles
        .iter()
        .flat_map(|p| {
            let g = glyph(p);
            if p.contracted() {
                vec![(p.head.q, p.head.r, g)]
            } else {
                vec![(p.head.q, p.head.r, g), (p.tail.q, p.tail.r, '.')]
            }
        })
        .collect();
    if nodes.is_empty() {
        return String::new();
    }
    let rmin = nodes.iter().map(|&(_, r, _)| r).min().unwrap();
    let rmax = nodes.iter().map(|&(_, r, _)| r).max().unwrap();
    let qmin = nodes.iter().map(|&(q, _, _)| q).min().unwrap();
    let qmax = nodes.iter().map(|&(q, _, _)| q).max().unwrap();
    let mut out = String::new();
    let _ = writeln!(out, "round {}", config.round);
    for r in (rmin..=rmax).rev() {
        // offset keeps the triangular adjacency legible in a char grid
        let indent = (r - rmin) as usize;
        let mut line = " ".repeat(indent);
        for q in qmin..=qmax {
            let c = nodes
                .iter()
                .find(|&&(nq, nr, _)| nq == q && nr == r)
                .map(|&(_, _, g)| g)
                .unwrap_or('·');
            line.push(c);
            line.push(' ');
        }
        let _ = writeln!(out, "L{r:+} {}", line.trim_end());
    }
    out
}

/// Standalone SVG frame with one circle per occupied node, a connecting
/// bar for expanded particles, and a direction tick where one is set.
pub fn svg_frame(config: &Configuration) -> String {
    const S: f64 = 28.0; // lattice pitch in px
    let cart = |q: i32, r: i32| -> (f64, f64) {
        (q as f64 * S + r as f64 * S / 2.0, -(r as f64) * S * 0.866)
    };
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for p in &config.particles {
        for n in [p.head, p.tail] {
            let (x, y) = cart(n.q, n.r);
            xs.push(x);
            ys.push(y);
        }
    }
    let pad = S * 1.5;
    let (x0, x1) = (
        xs.iter().cloned().fold(f64::MAX, f64::min) - pad,
        xs.iter().cloned().fold(f64::MIN, f64::max) + pad,
    );
    let (y0, y1) = (
        ys.iter().cloned().fold(f64::MAX, f64::min) - pad,
        ys.iter().cloned().fold(f64::MIN, f64::max) + pad,
    );
    let mut out = String::new();
    let _ = writeln!(
        out,
        r##"<svg xmlns="http://www.w3.org/2000/svg" viewBox="{:.1} {:.1} {:.1} {:.1}" width="{:.0}" height="{:.0}">"##,
        x0,
        y0,
        x1 - x0,
        y1 - y0,
        (x1 - x0) * 1.5,
        (y1 - y0) * 1.5,
    );
    let _ = writeln!(
        out,
        r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#fafafa"/>"##,
        x0,
        y0,
        x1 - x0,
        y1 - y0
    );
    // faint row guides
    for r in -2..=2 {
        let (_, y) = cart(0, r);
        let _ = writeln!(
            out,
            r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#e0e0e0" stroke-width="1"/>"##,
            x0, y, x1, y
        );
    }
    for p in &config.particles {
        let (hx, hy) = cart(p.head.q, p.head.r);
        if p.expanded() {
            let (tx, ty) = cart(p.tail.q, p.tail.r);
            let _ = writeln!(
                out,
                r##"<line x1="{hx:.1}" y1="{hy:.1}" x2="{tx:.1}" y2="{ty:.1}" stroke="{}" stroke-width="{:.1}" stroke-linecap="round" opacity="0.55"/>"##,
                color(p),
                S * 0.6,
            );
            let _ = writeln!(
                out,
                r##"<circle cx="{tx:.1}" cy="{ty:.1}" r="{:.1}" fill="{}" opacity="0.55"/>"##,
                S * 0.34,
                color(p)
            );
        }
        let _ = writeln!(
            out,
            r##"<circle cx="{hx:.1}" cy="{hy:.1}" r="{:.1}" fill="{}" stroke="#263238" stroke-width="1"/>"##,
            S * 0.38,
            color(p)
        );
        if let Some(d) = p.dir {
            let g = p.orientation.local_to_global(d);
            let (dq, dr) = g.delta();
            let (ex, ey) = cart(p.head.q, p.head.r);
            let (vx, vy) = (
                dq as f64 * S + dr as f64 * S / 2.0,
                -(dr as f64) * S * 0.866,
            );
            let norm = (vx * vx + vy * vy).sqrt();
            let _ = writeln!(
                out,
                r##"<line x1="{ex:.1}" y1="{ey:.1}" x2="{:.1}" y2="{:.1}" stroke="#263238" stroke-width="2"/>"##,
                ex + vx / norm * S * 0.46,
                ey + vy / norm * S * 0.46
            );
        }
        if p.faulty {
            let _ = writeln!(
                out,
                r##"<text x="{hx:.1}" y="{:.1}" font-size="{:.0}" text-anchor="middle" fill="#ffffff">x</text>"##,
                hy + S * 0.14,
                S * 0.45
            );
        }
    }
    let _ = writeln!(
        out,
        r##"<text x="{:.1}" y="{:.1}" font-size="12" fill="#546e7a">round {}</text>"##,
        x0 + 6.0,
        y0 + 16.0,
        config.round
    );
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{gen_initial, Scenario};
    use crate::scheduler::SchedulerPolicy;

    #[test]
    fn initial_text_frame_shows_all_particles() {
        let s = Scenario::new(8, &[], 3, SchedulerPolicy::FullSync).unwrap();
        let c = gen_initial(&s).unwrap();
        let frame = text_frame(&c);
        let middle: &str = frame.lines().find(|l| l.starts_with("L+0")).unwrap();
        assert_eq!(middle.matches('I').count(), 8);
    }

    #[test]
    fn svg_frame_is_standalone() {
        let s = Scenario::new(5, &[], 3, SchedulerPolicy::FullSync).unwrap();
        let c = gen_initial(&s).unwrap();
        let svg = svg_frame(&c);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<circle").count(), 5);
    }
}
