//! SVG line charts of response shares by group.
//!
//! One panel per method, side by side. Each response option is a coloured
//! line over the groups; the benchmark is drawn underneath in grey dashes.
//! Output depends only on the inputs, so re-rendering is byte-identical.

use std::fmt::Write;

use persona_synth::ingest::GroupedDistribution;

const PANEL_W: f64 = 320.0;
const PANEL_H: f64 = 240.0;
const MARGIN_L: f64 = 48.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 48.0;
const MARGIN_B: f64 = 72.0;
const LEGEND_H: f64 = 28.0;

const PALETTE: [&str; 8] = [
    "#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#1f78b4",
];
const GREY: &str = "#9a9a9a";

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders `panels` (title, synthetic distribution) against `real`.
///
/// Groups missing from a synthetic panel are left as gaps in its lines.
pub fn render(title: &str, real: &GroupedDistribution, panels: &[(String, GroupedDistribution)]) -> String {
    let cols = panels.len().max(1);
    let width = MARGIN_L + cols as f64 * (PANEL_W + MARGIN_R) + MARGIN_R;
    let height = MARGIN_T + PANEL_H + MARGIN_B + LEGEND_H;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        width / 2.0,
        escape(title)
    );
    let groups: Vec<&str> = real.categories();
    for (p, (name, synth)) in panels.iter().enumerate() {
        let x0 = MARGIN_L + p as f64 * (PANEL_W + MARGIN_R);
        panel(&mut s, x0, name, &groups, real, synth);
    }
    legend(&mut s, &real.responses, height - LEGEND_H + 4.0);
    s.push_str("</svg>\n");
    s
}

fn panel(s: &mut String, x0: f64, name: &str, groups: &[&str], real: &GroupedDistribution, synth: &GroupedDistribution) {
    let y0 = MARGIN_T;
    let n = groups.len();
    let x_at = |i: usize| {
        if n > 1 {
            x0 + PANEL_W * i as f64 / (n - 1) as f64
        } else {
            x0 + PANEL_W / 2.0
        }
    };
    let y_at = |v: f64| y0 + PANEL_H * (1.0 - v);

    let _ = writeln!(s, r#"<g class="panel">"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="12">{}</text>"#,
        x0 + PANEL_W / 2.0,
        y0 - 10.0,
        escape(name)
    );
    let _ = writeln!(
        s,
        r##"<rect x="{x0:.1}" y="{y0:.1}" width="{PANEL_W:.1}" height="{PANEL_H:.1}" fill="none" stroke="#444"/>"##
    );
    for tick in 0..=4 {
        let v = tick as f64 * 0.25;
        let y = y_at(v);
        let _ = writeln!(
            s,
            r##"<line x1="{x0:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#e5e5e5"/>"##,
            x0 + PANEL_W
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.0}%</text>"#,
            x0 - 4.0,
            y + 4.0,
            v * 100.0
        );
    }
    for (i, g) in groups.iter().enumerate() {
        let x = x_at(i);
        let y = y0 + PANEL_H + 12.0;
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{y:.1}" text-anchor="end" transform="rotate(-45 {x:.1} {y:.1})">{}</text>"#,
            escape(g)
        );
    }
    for r in 0..real.responses.len() {
        let pts: Vec<Option<(f64, f64)>> = groups
            .iter()
            .enumerate()
            .map(|(i, g)| real.group(g).map(|sh| (x_at(i), y_at(sh[r]))))
            .collect();
        polyline(s, &pts, GREY, true);
    }
    for r in 0..synth.responses.len() {
        let pts: Vec<Option<(f64, f64)>> = groups
            .iter()
            .enumerate()
            .map(|(i, g)| synth.group(g).map(|sh| (x_at(i), y_at(sh[r]))))
            .collect();
        polyline(s, &pts, PALETTE[r % PALETTE.len()], false);
    }
    let _ = writeln!(s, "</g>");
}

/// Draws connected runs of points; `None` breaks the line.
fn polyline(s: &mut String, pts: &[Option<(f64, f64)>], colour: &str, dashed: bool) {
    let dash = if dashed { r#" stroke-dasharray="4 3""# } else { "" };
    for run in pts.split(Option::is_none) {
        let coords: Vec<String> = run
            .iter()
            .flatten()
            .map(|(x, y)| format!("{x:.1},{y:.1}"))
            .collect();
        if coords.is_empty() {
            continue;
        }
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.6"{dash}/>"#,
            coords.join(" ")
        );
    }
}

fn legend(s: &mut String, responses: &[String], y: f64) {
    let mut x = MARGIN_L;
    for (r, label) in responses.iter().enumerate() {
        let colour = PALETTE[r % PALETTE.len()];
        let _ = writeln!(
            s,
            r#"<line x1="{x:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{colour}" stroke-width="2"/>"#,
            x + 18.0
        );
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, x + 22.0, y + 4.0, escape(label));
        x += 30.0 + 6.5 * label.len() as f64;
    }
    let _ = writeln!(
        s,
        r#"<line x1="{x:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{GREY}" stroke-width="2" stroke-dasharray="4 3"/>"#,
        x + 18.0
    );
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">benchmark</text>"#, x + 22.0, y + 4.0);
}

#[cfg(test)]
mod tests {
    use super::*;
    use persona_synth::ingest::GroupShares;

    fn dist(rows: &[(&str, [f64; 2])]) -> GroupedDistribution {
        GroupedDistribution {
            question_id: "q".into(),
            group_attribute: "Age".into(),
            responses: vec!["yes".into(), "no & maybe".into()],
            groups: rows
                .iter()
                .map(|(c, s)| GroupShares { category: c.to_string(), shares: s.to_vec() })
                .collect(),
            omitted: vec![],
        }
    }

    #[test]
    fn deterministic_and_escaped() {
        let real = dist(&[("young", [0.2, 0.8]), ("old", [0.6, 0.4])]);
        let panels = vec![("m1".to_string(), real.clone()), ("m2".to_string(), dist(&[("old", [0.5, 0.5])]))];
        let a = render("Walking <by age>", &real, &panels);
        assert_eq!(a, render("Walking <by age>", &real, &panels));
        assert!(a.contains("&lt;by age&gt;"));
        assert!(a.contains("no &amp; maybe"));
        assert_eq!(a.matches(r#"class="panel""#).count(), 2);
        assert!(a.contains(GREY));
    }

    #[test]
    fn missing_group_breaks_line() {
        let real = dist(&[("a", [0.2, 0.8]), ("b", [0.6, 0.4]), ("c", [0.1, 0.9])]);
        let gap = dist(&[("a", [0.2, 0.8]), ("c", [0.1, 0.9])]);
        let svg = render("t", &real, &[("m".into(), gap)]);
        // 2 grey lines + 2 options x 2 single-point runs
        assert_eq!(svg.matches("<polyline").count(), 6);
    }
}
