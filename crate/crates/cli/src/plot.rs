//! Minimal SVG line charts and event rasters.

use std::fmt::Write;

use petreg::SimTrace;

const W: f64 = 800.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const MAX_POINTS: usize = 2000;
const LOG_FLOOR: f64 = 1e-12;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn header(out: &mut String, title: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = write!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = write!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + (W - LEFT - RIGHT) / 2.0,
        escape(title)
    );
}

fn nice_ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
        return vec![lo];
    }
    let raw = (hi - lo) / n as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut ticks = Vec::new();
    while t <= hi + 1e-9 * step {
        ticks.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    ticks
}

/// Line chart. With `log_y`, values are plotted as `log10(max(y, 1e-12))`.
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    log_y: bool,
) -> String {
    let tf = |y: f64| if log_y { y.max(LOG_FLOOR).log10() } else { y };
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for &(x, y) in pts {
        if x.is_finite() && y.is_finite() {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(tf(y));
            y1 = y1.max(tf(y));
        }
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    if log_y {
        y0 = y0.floor();
        y1 = y1.ceil();
    } else {
        let pad = 0.05 * (y1 - y0);
        y0 -= pad;
        y1 += pad;
    }
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

    let mut out = String::new();
    header(&mut out, title);
    let _ = write!(
        out,
        r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##
    );
    for t in nice_ticks(x0, x1, 8) {
        let _ = write!(
            out,
            r##"<line x1="{0:.1}" y1="{1}" x2="{0:.1}" y2="{2}" stroke="#ddd"/><text x="{0:.1}" y="{3}" text-anchor="middle">{4}</text>"##,
            sx(t),
            TOP,
            TOP + ph,
            TOP + ph + 16.0,
            t
        );
    }
    let yticks = if log_y {
        (y0 as i64..=y1 as i64).map(|e| e as f64).collect()
    } else {
        nice_ticks(y0, y1, 6)
    };
    for t in yticks {
        let label = if log_y {
            format!("1e{t}")
        } else {
            format!("{t}")
        };
        let _ = write!(
            out,
            r##"<line x1="{0}" y1="{1:.1}" x2="{2}" y2="{1:.1}" stroke="#ddd"/><text x="{3}" y="{4:.1}" text-anchor="end">{5}</text>"##,
            LEFT,
            sy(t),
            LEFT + pw,
            LEFT - 6.0,
            sy(t) + 4.0,
            label
        );
    }
    let _ = write!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        H - 12.0,
        escape(x_label)
    );
    let _ = write!(
        out,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
        TOP + ph / 2.0,
        escape(y_label)
    );

    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let stride = s.points.len().div_ceil(MAX_POINTS).max(1);
        let mut path = String::new();
        for (j, &(x, y)) in s.points.iter().enumerate() {
            if j % stride != 0 && j + 1 != s.points.len() {
                continue;
            }
            if x.is_finite() && y.is_finite() {
                let _ = write!(path, "{:.2},{:.2} ", sx(x), sy(tf(y)));
            }
        }
        let dash = if s.dashed {
            r#" stroke-dasharray="6 4""#
        } else {
            ""
        };
        let _ = write!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.3"{dash}/>"#,
            path.trim_end()
        );
        let ly = TOP + 14.0 + 18.0 * k as f64;
        let lx = LEFT + pw + 12.0;
        let _ = write!(
            out,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/><text x="{}" y="{}">{}</text>"#,
            lx + 22.0,
            lx + 28.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// One row of tick marks per channel.
pub fn event_raster(title: &str, rows: &[(String, Vec<f64>)], t_end: f64) -> String {
    let pw = W - LEFT - RIGHT;
    let row_h = 22.0;
    let height = TOP + BOTTOM + row_h * rows.len().max(1) as f64;
    let t_end = if t_end > 0.0 { t_end } else { 1.0 };
    let sx = |t: f64| LEFT + t / t_end * pw;

    let mut out = String::new();
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{height}" viewBox="0 0 {W} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = write!(out, r#"<rect width="{W}" height="{height}" fill="white"/>"#);
    let _ = write!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + pw / 2.0,
        escape(title)
    );
    for (k, (label, times)) in rows.iter().enumerate() {
        let yc = TOP + row_h * (k as f64 + 0.5);
        let color = PALETTE[k % PALETTE.len()];
        let _ = write!(
            out,
            r##"<line x1="{LEFT}" y1="{yc}" x2="{}" y2="{yc}" stroke="#eee"/><text x="{}" y="{}" text-anchor="end">{}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            yc + 4.0,
            escape(label)
        );
        for &t in times {
            let x = sx(t);
            let _ = write!(
                out,
                r#"<line x1="{x:.2}" y1="{:.1}" x2="{x:.2}" y2="{:.1}" stroke="{color}"/>"#,
                yc - 8.0,
                yc + 8.0
            );
        }
        let _ = write!(
            out,
            r#"<text x="{}" y="{}">{} events</text>"#,
            LEFT + pw + 10.0,
            yc + 4.0,
            times.len()
        );
    }
    let base = TOP + row_h * rows.len().max(1) as f64;
    for t in nice_ticks(0.0, t_end, 8) {
        let _ = write!(
            out,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{t}</text>"#,
            sx(t),
            base + 16.0
        );
    }
    let _ = write!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">t [s]</text>"#,
        LEFT + pw / 2.0,
        base + 36.0
    );
    out.push_str("</svg>\n");
    out
}

/// Standard figure set for a completed run.
pub fn figures(trace: &SimTrace) -> Vec<(&'static str, String)> {
    let t = &trace.times;
    let t_end = t.last().copied().unwrap_or(0.0);
    let mut figs = Vec::new();

    let mut outputs = vec![Series {
        label: "leader y0".into(),
        points: (0..trace.len()).map(|k| (t[k], trace.y0(k))).collect(),
        dashed: true,
    }];
    for a in &trace.agents {
        outputs.push(Series {
            label: format!("y{}", a.agent),
            points: (0..trace.len()).map(|k| (t[k], a.x_at(k)[0])).collect(),
            dashed: false,
        });
    }
    figs.push((
        "outputs.svg",
        line_chart(
            "Follower outputs and leader output",
            "t [s]",
            "y",
            &outputs,
            false,
        ),
    ));

    let errors: Vec<Series> = trace
        .agents
        .iter()
        .map(|a| Series {
            label: format!("|e{}|", a.agent),
            points: t.iter().zip(&a.e).map(|(&t, &e)| (t, e.abs())).collect(),
            dashed: false,
        })
        .collect();
    figs.push((
        "errors.svg",
        line_chart("Regulation errors", "t [s]", "|e_i|", &errors, true),
    ));

    let mut observer = Vec::new();
    for c in 0..trace.nv {
        observer.push(Series {
            label: format!("v{}", c + 1),
            points: (0..trace.len())
                .map(|k| (t[k], trace.leader_at(k)[c]))
                .collect(),
            dashed: true,
        });
        for a in &trace.agents {
            observer.push(Series {
                label: format!("v_hat{} [{}]", a.agent, c + 1),
                points: (0..trace.len()).map(|k| (t[k], a.v_hat_at(k)[c])).collect(),
                dashed: false,
            });
        }
    }
    figs.push((
        "observer.svg",
        line_chart(
            "Leader state and observer estimates",
            "t [s]",
            "v",
            &observer,
            false,
        ),
    ));

    let err = trace.observer_error();
    figs.push((
        "observer_error.svg",
        line_chart(
            "Observer error",
            "t [s]",
            "max_i |v_hat_i - v|",
            &[Series {
                label: "max error".into(),
                points: t.iter().copied().zip(err).collect(),
                dashed: false,
            }],
            true,
        ),
    ));

    let rows: Vec<(String, Vec<f64>)> = trace
        .channels
        .iter()
        .map(|c| {
            (
                format!("{} -> {}", c.sender, c.receiver),
                trace
                    .net_events
                    .iter()
                    .filter(|e| e.sender == c.sender && e.receiver == c.receiver)
                    .map(|e| e.t)
                    .collect(),
            )
        })
        .collect();
    figs.push((
        "events_net.svg",
        event_raster("Network broadcasts per pair", &rows, t_end),
    ));

    if !trace.sensors.is_empty() {
        let rows: Vec<(String, Vec<f64>)> = trace
            .sensors
            .iter()
            .map(|s| {
                (
                    format!("sensor {}", s.agent),
                    trace
                        .sensor_events
                        .iter()
                        .filter(|e| e.agent == s.agent)
                        .map(|e| e.t)
                        .collect(),
                )
            })
            .collect();
        figs.push((
            "events_sensor.svg",
            event_raster("Sensor transmissions", &rows, t_end),
        ));
    }

    if trace.agents.iter().any(|a| !a.lyapunov.is_empty()) {
        let v: Vec<Series> = trace
            .agents
            .iter()
            .filter(|a| !a.lyapunov.is_empty())
            .map(|a| Series {
                label: format!("V{}", a.agent),
                points: t
                    .iter()
                    .zip(&a.lyapunov)
                    .map(|(&t, s)| (t, s.total))
                    .collect(),
                dashed: false,
            })
            .collect();
        figs.push((
            "lyapunov.svg",
            line_chart("Lyapunov function", "t [s]", "V_i", &v, true),
        ));
    }
    figs
}
