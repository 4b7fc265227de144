//! BVH motion-capture text format: HIERARCHY / MOTION, OFFSET, CHANNELS,
//! JOINT, End Site, Frames, Frame Time.
//!
//! The parser flattens the joint tree into file order and turns each End
//! Site into a channel-less leaf joint with a generated name; the exporter
//! reverses that, so parse -> export -> parse is stable. Joints that carry
//! channels but no children are exported without an End Site block, a
//! deliberate extension over strict BVH that this parser accepts back.

use std::collections::HashSet;

use thiserror::Error;

use crate::motion::rotation::{matrix_to_euler, rotation_axes};
use crate::motion::MotionSequence;

use super::{Channel, Joint, SkeletonGraph, SkeletonError};

#[derive(Debug, Error)]
pub enum BvhError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing {0} section")]
    MissingSection(&'static str),
    #[error("line {line}: unbalanced braces")]
    UnbalancedBraces { line: usize },
    #[error("line {line}: frame row has {actual} values, expected {expected} (sum of declared channels)")]
    FrameWidth {
        line: usize,
        expected: usize,
        actual: usize,
    },
    #[error("MOTION declares {expected} frames but {actual} rows follow")]
    FrameCount { expected: usize, actual: usize },
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
}

/// Raw per-frame channel values in hierarchy order, exactly as read.
#[derive(Debug, Clone, PartialEq)]
pub struct BvhMotion {
    pub frame_time: f64,
    pub frames: Vec<Vec<f64>>,
}

struct Token<'a> {
    line: usize,
    text: &'a str,
}

struct Cursor<'a> {
    tokens: Vec<Token<'a>>,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<&Token<'a>> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<&Token<'a>> {
        let t = self.tokens.get(self.pos);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn line(&self) -> usize {
        self.tokens
            .get(self.pos.min(self.tokens.len().saturating_sub(1)))
            .map_or(0, |t| t.line)
    }

    fn expect(&mut self, text: &str) -> Result<usize, BvhError> {
        let line = self.line();
        match self.next() {
            Some(t) if t.text.eq_ignore_ascii_case(text) => Ok(t.line),
            Some(t) => Err(BvhError::Parse {
                line: t.line,
                message: format!("expected '{text}', found '{}'", t.text),
            }),
            None => Err(BvhError::Parse {
                line,
                message: format!("expected '{text}', found end of input"),
            }),
        }
    }

    fn number(&mut self, what: &str) -> Result<f64, BvhError> {
        let line = self.line();
        match self.next() {
            Some(t) => t.text.parse::<f64>().map_err(|_| BvhError::Parse {
                line: t.line,
                message: format!("expected {what}, found '{}'", t.text),
            }),
            None => Err(BvhError::Parse {
                line,
                message: format!("expected {what}, found end of input"),
            }),
        }
    }
}

/// Parse a BVH document into a skeleton plus its raw channel frames.
pub fn parse_bvh(text: &str) -> Result<(SkeletonGraph, BvhMotion), BvhError> {
    let lines: Vec<&str> = text.lines().collect();
    let mut tokens = Vec::new();
    for (idx, line) in lines.iter().enumerate() {
        for tok in line.split_whitespace() {
            tokens.push(Token {
                line: idx + 1,
                text: tok,
            });
        }
    }
    if !tokens.iter().any(|t| t.text.eq_ignore_ascii_case("HIERARCHY")) {
        return Err(BvhError::MissingSection("HIERARCHY"));
    }
    if !tokens.iter().any(|t| t.text.eq_ignore_ascii_case("MOTION")) {
        return Err(BvhError::MissingSection("MOTION"));
    }
    let mut cur = Cursor { tokens, pos: 0 };

    cur.expect("HIERARCHY")?;
    cur.expect("ROOT")?;
    let mut joints = Vec::new();
    let mut used_names = HashSet::new();
    parse_joint_body(&mut cur, None, &mut joints, &mut used_names)?;

    cur.expect("MOTION")?;
    let frame_count = parse_frames_header(&mut cur)?;
    let frame_time = parse_frame_time_header(&mut cur)?;

    // Rows are line-based from here on so widths can be checked per row.
    let rows_start_line = cur
        .peek()
        .map(|t| t.line)
        .unwrap_or(lines.len() + 1);
    let expected_width: usize = joints.iter().map(|j| j.channels.len()).sum();
    let mut frames = Vec::new();
    for (idx, line) in lines.iter().enumerate().skip(rows_start_line - 1) {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::with_capacity(expected_width);
        for tok in line.split_whitespace() {
            row.push(tok.parse::<f64>().map_err(|_| BvhError::Parse {
                line: idx + 1,
                message: format!("expected channel value, found '{tok}'"),
            })?);
        }
        if row.len() != expected_width {
            return Err(BvhError::FrameWidth {
                line: idx + 1,
                expected: expected_width,
                actual: row.len(),
            });
        }
        frames.push(row);
    }
    if frames.len() != frame_count {
        return Err(BvhError::FrameCount {
            expected: frame_count,
            actual: frames.len(),
        });
    }

    let root_name = joints[0].name.clone();
    let skeleton = SkeletonGraph::new(root_name.clone(), root_name.to_lowercase(), joints)?;
    Ok((skeleton, BvhMotion { frame_time, frames }))
}

fn parse_frames_header(cur: &mut Cursor) -> Result<usize, BvhError> {
    let line = cur.line();
    match cur.next() {
        Some(t) if t.text.eq_ignore_ascii_case("Frames:") => {}
        Some(t) if t.text.eq_ignore_ascii_case("Frames") => {
            cur.expect(":")?;
        }
        Some(t) => {
            return Err(BvhError::Parse {
                line: t.line,
                message: format!("expected 'Frames:', found '{}'", t.text),
            })
        }
        None => {
            return Err(BvhError::Parse {
                line,
                message: "expected 'Frames:', found end of input".to_string(),
            })
        }
    }
    let n = cur.number("frame count")?;
    if n < 0.0 || n.fract() != 0.0 {
        return Err(BvhError::Parse {
            line: cur.line(),
            message: format!("frame count must be a non-negative integer, got {n}"),
        });
    }
    Ok(n as usize)
}

fn parse_frame_time_header(cur: &mut Cursor) -> Result<f64, BvhError> {
    cur.expect("Frame")?;
    let line = cur.line();
    match cur.next() {
        Some(t) if t.text.eq_ignore_ascii_case("Time:") => {}
        Some(t) if t.text.eq_ignore_ascii_case("Time") => {
            cur.expect(":")?;
        }
        Some(t) => {
            return Err(BvhError::Parse {
                line: t.line,
                message: format!("expected 'Time:', found '{}'", t.text),
            })
        }
        None => {
            return Err(BvhError::Parse {
                line,
                message: "expected 'Time:', found end of input".to_string(),
            })
        }
    }
    cur.number("frame time")
}

/// Parse one joint: name tokens up to '{', then offset, channels, children.
/// Appends to `joints` in file order and returns the joint's index.
fn parse_joint_body(
    cur: &mut Cursor,
    parent: Option<usize>,
    joints: &mut Vec<Joint>,
    used_names: &mut HashSet<String>,
) -> Result<usize, BvhError> {
    let mut name_parts = Vec::new();
    loop {
        match cur.peek() {
            Some(t) if t.text == "{" => break,
            Some(t) => {
                name_parts.push(t.text.to_string());
                cur.next();
            }
            None => {
                return Err(BvhError::Parse {
                    line: cur.line(),
                    message: "expected joint name, found end of input".to_string(),
                })
            }
        }
    }
    if name_parts.is_empty() {
        return Err(BvhError::Parse {
            line: cur.line(),
            message: "joint has no name".to_string(),
        });
    }
    let name = unique_name(name_parts.join(" "), used_names);
    let open_line = cur.expect("{")?;

    cur.expect("OFFSET")?;
    let offset = [
        cur.number("offset x")?,
        cur.number("offset y")?,
        cur.number("offset z")?,
    ];

    let mut channels = Vec::new();
    if cur.peek().is_some_and(|t| t.text.eq_ignore_ascii_case("CHANNELS")) {
        cur.next();
        let count = cur.number("channel count")? as usize;
        for _ in 0..count {
            let line = cur.line();
            let t = cur.next().ok_or(BvhError::Parse {
                line,
                message: "expected channel name, found end of input".to_string(),
            })?;
            channels.push(parse_channel(t.text, t.line)?);
        }
    }

    let index = joints.len();
    joints.push(Joint {
        name,
        parent,
        rest_offset: offset,
        channels,
    });

    loop {
        match cur.peek().map(|t| t.text) {
            Some("}") => {
                cur.next();
                return Ok(index);
            }
            Some(t) if t.eq_ignore_ascii_case("JOINT") => {
                cur.next();
                parse_joint_body(cur, Some(index), joints, used_names)?;
            }
            Some(t) if t.eq_ignore_ascii_case("End") => {
                cur.next();
                // "End Site": channel-less leaf with a generated name.
                let line = cur.line();
                let site = cur.next().ok_or(BvhError::Parse {
                    line,
                    message: "expected 'Site' after 'End'".to_string(),
                })?;
                if !site.text.eq_ignore_ascii_case("Site") {
                    return Err(BvhError::Parse {
                        line: site.line,
                        message: format!("expected 'Site' after 'End', found '{}'", site.text),
                    });
                }
                cur.expect("{")?;
                cur.expect("OFFSET")?;
                let end_offset = [
                    cur.number("offset x")?,
                    cur.number("offset y")?,
                    cur.number("offset z")?,
                ];
                cur.expect("}")?;
                let end_name =
                    unique_name(format!("{}_end", joints[index].name), used_names);
                joints.push(Joint {
                    name: end_name,
                    parent: Some(index),
                    rest_offset: end_offset,
                    channels: Vec::new(),
                });
            }
            Some(other) => {
                return Err(BvhError::Parse {
                    line: cur.line(),
                    message: format!("expected JOINT, End Site or '}}', found '{other}'"),
                })
            }
            None => return Err(BvhError::UnbalancedBraces { line: open_line }),
        }
    }
}

fn unique_name(base: String, used: &mut HashSet<String>) -> String {
    let mut name = base.clone();
    let mut counter = 2;
    while used.contains(&name) {
        name = format!("{base}{counter}");
        counter += 1;
    }
    used.insert(name.clone());
    name
}

fn parse_channel(text: &str, line: usize) -> Result<Channel, BvhError> {
    let c = match text.to_ascii_lowercase().as_str() {
        "xposition" => Channel::Xposition,
        "yposition" => Channel::Yposition,
        "zposition" => Channel::Zposition,
        "xrotation" => Channel::Xrotation,
        "yrotation" => Channel::Yrotation,
        "zrotation" => Channel::Zrotation,
        _ => {
            return Err(BvhError::Parse {
                line,
                message: format!("unknown channel '{text}'"),
            })
        }
    };
    Ok(c)
}

/// Serialize a skeleton and motion to BVH text. Channel rows are derived
/// from the motion's root position and per-joint local rotations; floats are
/// printed in shortest round-trip form.
pub fn export_bvh(
    s: &SkeletonGraph,
    motion: &MotionSequence,
    frame_time: f64,
) -> Result<String, SkeletonError> {
    if motion.joint_count() != s.joint_count() {
        return Err(SkeletonError::JointCountMismatch {
            skeleton: s.joint_count(),
            motion: motion.joint_count(),
        });
    }
    let mut out = String::new();
    out.push_str("HIERARCHY\n");
    write_joint(s, 0, 0, &mut out);
    out.push_str("MOTION\n");
    out.push_str(&format!("Frames: {}\n", motion.frame_count()));
    out.push_str(&format!("Frame Time: {frame_time}\n"));
    for t in 0..motion.frame_count() {
        let mut row: Vec<String> = Vec::new();
        for (j, joint) in s.joints().iter().enumerate() {
            if joint.channels.is_empty() {
                continue;
            }
            let rot = motion.rotation_matrix(t, j);
            let rot_axes = rotation_axes(&joint.channels);
            let angles = rot_axes.map(|axes| matrix_to_euler(axes, &rot));
            let mut rot_cursor = 0;
            for ch in &joint.channels {
                let v = match ch {
                    Channel::Xposition | Channel::Yposition | Channel::Zposition => {
                        if joint.parent.is_none() {
                            let p = motion.position(t, j);
                            match ch {
                                Channel::Xposition => p[0],
                                Channel::Yposition => p[1],
                                _ => p[2],
                            }
                        } else {
                            // Non-root translation channels are not part of
                            // the motion representation; exported as rest.
                            0.0
                        }
                    }
                    _ => {
                        let a = angles
                            .as_ref()
                            .map(|v| v[rot_cursor].to_degrees())
                            .unwrap_or(0.0);
                        rot_cursor += 1;
                        a
                    }
                };
                row.push(format!("{v}"));
            }
        }
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    Ok(out)
}

fn write_joint(s: &SkeletonGraph, idx: usize, depth: usize, out: &mut String) {
    let indent = "  ".repeat(depth);
    let joint = &s.joints()[idx];
    let is_end_site = joint.parent.is_some() && s.is_leaf(idx) && joint.channels.is_empty();
    if is_end_site {
        out.push_str(&format!("{indent}End Site\n"));
    } else if joint.parent.is_none() {
        out.push_str(&format!("{indent}ROOT {}\n", joint.name));
    } else {
        out.push_str(&format!("{indent}JOINT {}\n", joint.name));
    }
    out.push_str(&format!("{indent}{{\n"));
    out.push_str(&format!(
        "{indent}  OFFSET {} {} {}\n",
        joint.rest_offset[0], joint.rest_offset[1], joint.rest_offset[2]
    ));
    if !joint.channels.is_empty() {
        let names: Vec<&str> = joint.channels.iter().map(|c| c.bvh_name()).collect();
        out.push_str(&format!(
            "{indent}  CHANNELS {} {}\n",
            joint.channels.len(),
            names.join(" ")
        ));
    }
    for child in s.children(idx) {
        write_joint(s, child, depth + 1, out);
    }
    out.push_str(&format!("{indent}}}\n"));
}

#[cfg(test)]
mod tests {
    use super::*;

    const THREE_CHAIN: &str = "\
HIERARCHY
ROOT hips
{
  OFFSET 0.0 0.0 0.0
  CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation
  JOINT spine
  {
    OFFSET 0.0 1.0 0.0
    CHANNELS 3 Zrotation Xrotation Yrotation
    JOINT head
    {
      OFFSET 0.0 0.8 0.1
      CHANNELS 3 Zrotation Xrotation Yrotation
      End Site
      {
        OFFSET 0.0 0.3 0.0
      }
    }
  }
}
MOTION
Frames: 2
Frame Time: 0.05
0.0 0.9 0.0 0.0 0.0 0.0 5.0 0.0 0.0 1.0 2.0 3.0
0.1 0.9 0.0 1.0 0.0 0.0 5.5 0.0 0.0 1.5 2.0 3.0
";

    #[test]
    fn parses_three_joint_chain() {
        let (s, motion) = parse_bvh(THREE_CHAIN).unwrap();
        assert_eq!(s.joint_count(), 4); // incl. end site leaf
        let parents: Vec<Option<usize>> = s.joints().iter().map(|j| j.parent).collect();
        assert_eq!(parents, vec![None, Some(0), Some(1), Some(2)]);
        assert_eq!(s.joints()[3].name, "head_end");
        assert!(s.joints()[3].channels.is_empty());
        assert_eq!(motion.frames.len(), 2);
        assert_eq!(motion.frame_time, 0.05);
        assert_eq!(motion.frames[1][0], 0.1);
    }

    #[test]
    fn frame_width_mismatch_names_expected_and_actual() {
        let bad = THREE_CHAIN.replace(
            "0.1 0.9 0.0 1.0 0.0 0.0 5.5 0.0 0.0 1.5 2.0 3.0",
            "0.1 0.9 0.0",
        );
        let err = parse_bvh(&bad).unwrap_err();
        match err {
            BvhError::FrameWidth {
                expected, actual, ..
            } => {
                assert_eq!(expected, 12);
                assert_eq!(actual, 3);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn missing_motion_section() {
        let idx = THREE_CHAIN.find("MOTION").unwrap();
        let err = parse_bvh(&THREE_CHAIN[..idx]).unwrap_err();
        assert!(matches!(err, BvhError::MissingSection("MOTION")));
    }

    #[test]
    fn unbalanced_braces_report_a_line() {
        let truncated = THREE_CHAIN.replace("  }\n}\nMOTION", "MOTION");
        let err = parse_bvh(&truncated).unwrap_err();
        match err {
            BvhError::UnbalancedBraces { line } => assert!(line > 0),
            BvhError::Parse { line, .. } => assert!(line > 0),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn frame_count_mismatch() {
        let bad = THREE_CHAIN.replace("Frames: 2", "Frames: 3");
        let err = parse_bvh(&bad).unwrap_err();
        assert!(matches!(
            err,
            BvhError::FrameCount {
                expected: 3,
                actual: 2
            }
        ));
    }
}
