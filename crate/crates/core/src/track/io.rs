//! Semicolon-separated waypoint and centerline files.

use std::fs;
use std::path::Path;

use super::{Raceline, TrackCenterline, TrackError, Waypoint};
use crate::geometry::Point2;

const WAYPOINT_HEADER: [&str; 5] = ["x", "y", "v", "theta", "gamma"];
const CENTERLINE_HEADER: [&str; 4] = ["x", "y", "w_left", "w_right"];

fn read(path: &Path) -> Result<String, TrackError> {
    fs::read_to_string(path).map_err(|source| TrackError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<(), TrackError> {
    fs::write(path, text).map_err(|source| TrackError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses rows of `N` numeric columns under a fixed header.
fn parse_rows<const N: usize>(
    text: &str,
    header: [&str; N],
    source_name: &str,
) -> Result<Vec<[f64; N]>, TrackError> {
    let parse_err = |line: usize, msg: String| TrackError::Parse {
        source_name: source_name.to_string(),
        line,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b';')
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let found = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(parse_err(
            1,
            format!(
                "expected header `{}`, found `{}`",
                header.join(";"),
                found.iter().collect::<Vec<_>>().join(";")
            ),
        ));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != N {
            return Err(parse_err(
                line,
                format!("expected {N} fields, found {}", record.len()),
            ));
        }
        let mut row = [0.0; N];
        for (k, field) in record.iter().enumerate() {
            row[k] = field.parse().map_err(|_| {
                parse_err(
                    line,
                    format!("field `{}` is not a number: `{field}`", header[k]),
                )
            })?;
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn parse_waypoints(
    text: &str,
    closed: bool,
    source_name: &str,
) -> Result<Raceline, TrackError> {
    let rows = parse_rows(text, WAYPOINT_HEADER, source_name)?;
    let wps = rows
        .into_iter()
        .map(|[x, y, v, theta, gamma]| Waypoint {
            x,
            y,
            v,
            theta,
            gamma,
        })
        .collect();
    Raceline::new(wps, closed)
}

/// Loads a waypoint CSV as a closed raceline.
pub fn load_waypoints(path: &Path) -> Result<Raceline, TrackError> {
    parse_waypoints(&read(path)?, true, &path.display().to_string())
}

pub fn format_waypoints(raceline: &Raceline) -> String {
    let mut out = WAYPOINT_HEADER.join(";");
    out.push('\n');
    for w in raceline.waypoints() {
        out.push_str(&format!(
            "{};{};{};{};{}\n",
            w.x, w.y, w.v, w.theta, w.gamma
        ));
    }
    out
}

pub fn save_waypoints(path: &Path, raceline: &Raceline) -> Result<(), TrackError> {
    write(path, &format_waypoints(raceline))
}

pub fn parse_centerline(text: &str, source_name: &str) -> Result<TrackCenterline, TrackError> {
    let rows = parse_rows(text, CENTERLINE_HEADER, source_name)?;
    let mut centers = Vec::with_capacity(rows.len());
    let mut left = Vec::with_capacity(rows.len());
    let mut right = Vec::with_capacity(rows.len());
    for [x, y, wl, wr] in rows {
        centers.push(Point2::new(x, y));
        left.push(wl);
        right.push(wr);
    }
    TrackCenterline::new(centers, left, right)
}

pub fn load_centerline(path: &Path) -> Result<TrackCenterline, TrackError> {
    parse_centerline(&read(path)?, &path.display().to_string())
}

pub fn format_centerline(track: &TrackCenterline) -> String {
    let mut out = CENTERLINE_HEADER.join(";");
    out.push('\n');
    for i in 0..track.len() {
        let c = track.centers[i];
        out.push_str(&format!(
            "{};{};{};{}\n",
            c.x, c.y, track.half_width_left[i], track.half_width_right[i]
        ));
    }
    out
}

pub fn save_centerline(path: &Path, track: &TrackCenterline) -> Result<(), TrackError> {
    write(path, &format_centerline(track))
}
