//! Built-in patches.

use std::fmt;

use lipbound_core::{ChartDomain, Frame, LipschitzPatch, Result, SurfaceExpr, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag {
    Smooth,
    Corner,
    Tilted,
    Flat,
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tag::Smooth => "smooth",
            Tag::Corner => "corner",
            Tag::Tilted => "tilted",
            Tag::Flat => "flat",
        })
    }
}

impl Tag {
    pub fn parse(s: &str) -> Option<Tag> {
        match s {
            "smooth" => Some(Tag::Smooth),
            "corner" => Some(Tag::Corner),
            "tilted" => Some(Tag::Tilted),
            "flat" => Some(Tag::Flat),
            _ => None,
        }
    }
}

/// Everything needed to build a patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSpec {
    pub name: String,
    pub graph: String,
    pub domain: ChartDomain,
    pub epsilon: f64,
    pub h: f64,
    pub anchor: [f64; 3],
    pub frame: Option<([f64; 3], [f64; 3])>,
    pub tags: Vec<Tag>,
}

impl PatchSpec {
    pub fn build(&self) -> Result<LipschitzPatch> {
        let frame = match self.frame {
            None => Frame::identity(),
            Some((w1, w2)) => Frame::orthonormalized(Vec3::new(w1[0], w1[1], w1[2]), Vec3::new(w2[0], w2[1], w2[2]))?.0,
        };
        let a = self.anchor;
        LipschitzPatch::new(
            self.name.clone(),
            Vec3::new(a[0], a[1], a[2]),
            frame,
            self.epsilon,
            self.h,
            SurfaceExpr::parse(&self.graph)?,
            self.domain,
        )
    }
}

pub const DEFAULT_HALF_HEIGHT: f64 = 4.0;

/// Smallest `eps` whose ball holds the domain.
pub fn default_epsilon(domain: &ChartDomain) -> f64 {
    match domain {
        ChartDomain::Rect(r) => r.corners().iter().map(|c| c.norm()).fold(0.0, f64::max),
        ChartDomain::Disk { radius } => *radius,
    }
}

fn entry(name: &str, graph: &str, tags: &[Tag]) -> PatchSpec {
    let domain = ChartDomain::rect((-1.0, 1.0), (-1.0, 1.0));
    PatchSpec {
        name: name.into(),
        graph: graph.into(),
        domain,
        epsilon: default_epsilon(&domain),
        h: DEFAULT_HALF_HEIGHT,
        anchor: [0.0; 3],
        frame: None,
        tags: tags.to_vec(),
    }
}

/// flat, tilted, sinusoid, corner and pyramid over `(-1, 1)^2`.
pub fn builtin() -> Vec<PatchSpec> {
    vec![
        entry("flat", "0", &[Tag::Flat, Tag::Smooth]),
        entry("tilted", "x1", &[Tag::Tilted, Tag::Smooth]),
        entry("sinusoid", "0.25*sin(3*x1)*cos(2*x2)", &[Tag::Smooth]),
        entry("corner", "abs(x1)", &[Tag::Corner]),
        entry("pyramid", "max(abs(x1),abs(x2))", &[Tag::Corner]),
    ]
}

pub fn lookup(name: &str) -> Option<PatchSpec> {
    builtin().into_iter().find(|p| p.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_build_and_names_are_unique() {
        let all = builtin();
        for (i, p) in all.iter().enumerate() {
            p.build().unwrap();
            assert!(all[..i].iter().all(|q| q.name != p.name));
        }
        assert!((all[0].epsilon - 2f64.sqrt()).abs() < 1e-15);
    }
}
