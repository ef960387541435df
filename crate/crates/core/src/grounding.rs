//! Phrase parsing, proposal scoring and pointing-based disambiguation.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{bearing_of_pixel, camera_to_map, normalize_angle, PixelBox, Ray3, Vec2};
use crate::world::{RobotState, ViewEntry};

const DEFAULT_LEXICON: &str = include_str!("../data/lexicon.txt");
const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords.txt");
const REFERRAL_WORDS: [&str; 4] = ["ask", "person", "him", "her"];

/// Presence threshold on the proposal score.
pub const DEFAULT_THRESHOLD: f64 = 0.60;
const CLASS_WEIGHT: f64 = 0.7;
const ATTR_WEIGHT: f64 = 0.3;
/// Offsets within this of the best one count as a tie, radians.
const TIE_WINDOW: f64 = 0.5 * std::f64::consts::PI / 180.0;
/// Ground distance used when a box bottom sits on or above the horizon.
const FAR_GROUND: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GroundingError {
    #[error("phrase '{0}' has no content words")]
    EmptyPhrase(String),
    #[error("no candidates to disambiguate")]
    NoCandidates,
    #[error("lexicon line {line}: expected 'synonym,class', got '{text}'")]
    BadLexicon { line: usize, text: String },
}

/// Synonym → class map, stopwords and referral words.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    classes: HashMap<String, String>,
    stopwords: HashSet<String>,
    referral: HashSet<String>,
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

impl Lexicon {
    pub fn parse(lexicon: &str, stopwords: &str) -> Result<Self, GroundingError> {
        let mut classes = HashMap::new();
        for (line, l) in content_lines(lexicon) {
            let bad = || GroundingError::BadLexicon {
                line,
                text: l.to_string(),
            };
            let (syn, class) = l.split_once(',').ok_or_else(bad)?;
            let (syn, class) = (syn.trim().to_lowercase(), class.trim().to_lowercase());
            if syn.is_empty() || class.is_empty() || syn.contains(char::is_whitespace) {
                return Err(bad());
            }
            classes.insert(syn, class);
        }
        let stopwords = content_lines(stopwords).map(|(_, l)| l.to_lowercase()).collect();
        Ok(Self {
            classes,
            stopwords,
            referral: REFERRAL_WORDS.iter().map(|s| s.to_string()).collect(),
        })
    }

    pub fn class_of(&self, token: &str) -> Option<&str> {
        self.classes.get(token).map(String::as_str)
    }

    pub fn is_stopword(&self, token: &str) -> bool {
        self.stopwords.contains(token)
    }
}

impl Default for Lexicon {
    fn default() -> Self {
        Self::parse(DEFAULT_LEXICON, DEFAULT_STOPWORDS).expect("bundled lexicon parses")
    }
}

/// Parsed command phrase.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phrase {
    pub raw: String,
    /// Class of the last lexicon word in the phrase.
    pub class_token: Option<String>,
    pub attribute_tokens: BTreeSet<String>,
    /// The phrase asks the robot to go and talk to someone.
    pub referral: bool,
}

pub fn tokenize(raw: &str) -> Vec<String> {
    raw.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

pub fn parse_phrase(raw: &str, lex: &Lexicon) -> Result<Phrase, GroundingError> {
    let tokens = tokenize(raw);
    let class_pos = tokens.iter().rposition(|t| lex.class_of(t).is_some());
    let class_token = class_pos.map(|i| lex.class_of(&tokens[i]).unwrap_or_default().to_string());
    let referral = tokens.iter().any(|t| lex.referral.contains(t.as_str()));
    let attribute_tokens: BTreeSet<String> = tokens
        .iter()
        .enumerate()
        .filter(|&(i, t)| Some(i) != class_pos && !lex.is_stopword(t))
        .map(|(_, t)| t.clone())
        .collect();
    if class_token.is_none() && attribute_tokens.is_empty() && !referral {
        return Err(GroundingError::EmptyPhrase(raw.to_string()));
    }
    Ok(Phrase {
        raw: raw.to_string(),
        class_token,
        attribute_tokens,
        referral,
    })
}

/// Scored candidate box for the phrase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingProposal {
    pub object_id: String,
    pub class_label: String,
    pub bbox: PixelBox,
    pub score: f64,
    pub visible_fraction: f64,
}

/// `vis × (0.7·class_match + 0.3·attribute_overlap)`.
pub fn score(visible_fraction: f64, class_match: bool, attr_overlap: f64) -> f64 {
    let c = if class_match { 1.0 } else { 0.0 };
    visible_fraction * (CLASS_WEIGHT * c + ATTR_WEIGHT * attr_overlap)
}

/// Share of the phrase's attributes the object carries; 1 when the phrase has none.
pub fn attribute_overlap<'a>(object: impl IntoIterator<Item = &'a String>, phrase: &BTreeSet<String>) -> f64 {
    if phrase.is_empty() {
        return 1.0;
    }
    let have: HashSet<&String> = object.into_iter().collect();
    phrase.iter().filter(|a| have.contains(a)).count() as f64 / phrase.len() as f64
}

/// Proposals scoring at least `threshold`, best first (ties by id).
pub fn ground(view: &[ViewEntry], phrase: &Phrase, threshold: f64) -> Vec<GroundingProposal> {
    let mut out: Vec<GroundingProposal> = view
        .iter()
        .filter_map(|e| {
            let class_match = phrase.class_token.as_deref() == Some(e.class_label.as_str());
            let s = score(e.view.visible_fraction, class_match, attribute_overlap(&e.attributes, &phrase.attribute_tokens));
            (s >= threshold && s > 0.0).then(|| GroundingProposal {
                object_id: e.view.object_id.clone(),
                class_label: e.class_label.clone(),
                bbox: e.view.bbox,
                score: s,
                visible_fraction: e.view.visible_fraction,
            })
        })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.object_id.cmp(&b.object_id)));
    out
}

/// Floor point under the bottom centre of a box, from the robot camera.
pub fn box_ground_point(bbox: &PixelBox, robot: &RobotState) -> Vec2 {
    let k = &robot.intrinsics;
    let px = bbox.bottom_center();
    let px = Vec2::new(px.x.clamp(0.0, k.width as f64), px.y.clamp(0.0, k.height as f64));
    let t = camera_to_map(&robot.pose, robot.camera_height);
    let ray = bearing_of_pixel(&px, k).map(|r| t.apply_ray(&r)).expect("clamped pixel is inside the image");
    let cam = ray.origin.xy();
    if ray.direction.z < -1e-6 {
        let s = -ray.origin.z / ray.direction.z;
        ray.at(s).xy()
    } else {
        let h = ray.direction.xy();
        cam + h.normalize() * FAR_GROUND
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateOffset {
    pub object_id: String,
    /// Estimated floor position of the object.
    pub ground: [f64; 2],
    /// Absolute angle between the pointing azimuth and the bearing to the object, radians.
    pub offset: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disambiguation {
    pub chosen: GroundingProposal,
    pub candidates: Vec<CandidateOffset>,
}

/// Picks the proposal whose bearing from the pointing ray's ground origin is
/// closest to the pointing azimuth.
pub fn disambiguate(proposals: &[GroundingProposal], pointing_ray_map: &Ray3, robot: &RobotState) -> Result<Disambiguation, GroundingError> {
    if proposals.is_empty() {
        return Err(GroundingError::NoCandidates);
    }
    let origin = pointing_ray_map.origin.xy();
    let h = pointing_ray_map.direction.xy();
    let azimuth = h.y.atan2(h.x);
    let candidates: Vec<CandidateOffset> = proposals
        .iter()
        .map(|p| {
            let g = box_ground_point(&p.bbox, robot);
            let d = g - origin;
            CandidateOffset {
                object_id: p.object_id.clone(),
                ground: [g.x, g.y],
                offset: normalize_angle(d.y.atan2(d.x) - azimuth).abs(),
                distance: d.norm(),
            }
        })
        .collect();
    let best = candidates.iter().map(|c| c.offset).fold(f64::INFINITY, f64::min);
    let pick = (0..proposals.len())
        .filter(|&i| candidates[i].offset <= best + TIE_WINDOW)
        .min_by(|&a, &b| {
            proposals[b]
                .score
                .total_cmp(&proposals[a].score)
                .then_with(|| candidates[a].distance.total_cmp(&candidates[b].distance))
                .then_with(|| proposals[a].object_id.cmp(&proposals[b].object_id))
        })
        .expect("at least one candidate is within the tie window");
    Ok(Disambiguation {
        chosen: proposals[pick].clone(),
        candidates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{project, Pose2, Vec3};
    use crate::world::ObjectView;

    fn set(words: &[&str]) -> BTreeSet<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parses_simple_phrase() {
        let p = parse_phrase("the red chair", &Lexicon::default()).unwrap();
        assert_eq!(p.class_token.as_deref(), Some("chair"));
        assert_eq!(p.attribute_tokens, set(&["red"]));
        assert!(!p.referral);
    }

    #[test]
    fn parses_long_phrase() {
        let p = parse_phrase("Go to the small wooden table, near the window!", &Lexicon::default()).unwrap();
        assert_eq!(p.class_token.as_deref(), Some("table"));
        assert_eq!(p.attribute_tokens, set(&["small", "wooden", "near", "window"]));
    }

    #[test]
    fn punctuation_only_is_empty() {
        assert!(matches!(parse_phrase("!!!", &Lexicon::default()), Err(GroundingError::EmptyPhrase(_))));
        assert!(matches!(parse_phrase("go to the", &Lexicon::default()), Err(GroundingError::EmptyPhrase(_))));
    }

    #[test]
    fn referral_phrase() {
        let p = parse_phrase("Ask that person over there", &Lexicon::default()).unwrap();
        assert!(p.referral);
        assert_eq!(p.class_token.as_deref(), Some("person"));
        assert!(p.attribute_tokens.is_empty());
    }

    #[test]
    fn synonyms_map_to_classes() {
        let p = parse_phrase("the comfy couch", &Lexicon::default()).unwrap();
        assert_eq!(p.class_token.as_deref(), Some("sofa"));
    }

    #[test]
    fn bad_lexicon_line_reports_line_number() {
        let e = Lexicon::parse("chair,chair\n\nno comma here\n", "").unwrap_err();
        assert_eq!(
            e,
            GroundingError::BadLexicon {
                line: 3,
                text: "no comma here".into()
            }
        );
    }

    fn entry(id: &str, class: &str, attrs: &[&str], vis: f64) -> ViewEntry {
        let b = PixelBox {
            x_min: 100.0,
            y_min: 100.0,
            x_max: 200.0,
            y_max: 300.0,
        };
        ViewEntry {
            view: ObjectView {
                object_id: id.into(),
                bbox: b,
                raw_bbox: b,
                near_clipped: false,
                visible_fraction: vis,
            },
            class_label: class.into(),
            attributes: attrs.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn red_and_blue_chairs() {
        let view = vec![entry("blue", "chair", &["blue"], 1.0), entry("red", "chair", &["red"], 1.0)];
        let p = parse_phrase("red chair", &Lexicon::default()).unwrap();
        let g = ground(&view, &p, DEFAULT_THRESHOLD);
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].object_id, "red");
        assert!((g[0].score - 1.0).abs() < 1e-12);
        assert!((g[1].score - 0.7).abs() < 1e-12);
    }

    #[test]
    fn wrong_class_and_empty_scene() {
        let view = vec![entry("a", "chair", &["red"], 1.0)];
        let p = parse_phrase("sofa", &Lexicon::default()).unwrap();
        assert!(ground(&view, &p, DEFAULT_THRESHOLD).is_empty());
        assert!(ground(&[], &p, DEFAULT_THRESHOLD).is_empty());
    }

    fn robot() -> RobotState {
        RobotState::new(Pose2::identity())
    }

    /// Proposal whose box bottom lands on the floor point `g`.
    fn proposal_at(id: &str, g: Vec2, score: f64) -> GroundingProposal {
        let r = robot();
        let t = camera_to_map(&r.pose, r.camera_height).inverse();
        let px = project(&t.apply(&Vec3::new(g.x, g.y, 0.0)), &r.intrinsics).unwrap();
        GroundingProposal {
            object_id: id.into(),
            class_label: "chair".into(),
            bbox: PixelBox {
                x_min: px.x - 10.0,
                y_min: px.y - 50.0,
                x_max: px.x + 10.0,
                y_max: px.y,
            },
            score,
            visible_fraction: 1.0,
        }
    }

    fn ray_from(origin: Vec2, az: f64) -> Ray3 {
        Ray3::new(Vec3::new(origin.x, origin.y, 1.4), Vec3::new(az.cos(), az.sin(), -0.3)).unwrap()
    }

    #[test]
    fn ground_point_round_trips() {
        let p = proposal_at("x", Vec2::new(4.0, 0.7), 1.0);
        let g = box_ground_point(&p.bbox, &robot());
        assert!((g - Vec2::new(4.0, 0.7)).norm() < 1e-9);
    }

    #[test]
    fn picks_smallest_offset() {
        let origin = Vec2::new(4.0, -3.0);
        let at = |deg: f64| origin + 3.0 * Vec2::new(deg.to_radians().cos(), deg.to_radians().sin());
        let props = vec![proposal_at("far", at(130.0), 0.9), proposal_at("near", at(100.0), 0.8)];
        let d = disambiguate(&props, &ray_from(origin, 90f64.to_radians()), &robot()).unwrap();
        assert_eq!(d.chosen.object_id, "near");
    }

    #[test]
    fn single_and_empty() {
        let p = proposal_at("only", Vec2::new(5.0, 0.0), 0.7);
        let ray = ray_from(Vec2::new(2.0, -2.0), 0.3);
        assert_eq!(disambiguate(std::slice::from_ref(&p), &ray, &robot()).unwrap().chosen, p);
        assert_eq!(disambiguate(&[], &ray, &robot()), Err(GroundingError::NoCandidates));
    }

    #[test]
    fn symmetric_tie_goes_to_higher_score() {
        let origin = Vec2::new(5.0, -3.0);
        let at = |deg: f64| origin + 3.0 * Vec2::new(deg.to_radians().cos(), deg.to_radians().sin());
        let props = vec![proposal_at("lo", at(70.0), 0.7), proposal_at("hi", at(110.0), 0.9)];
        let d = disambiguate(&props, &ray_from(origin, 90f64.to_radians()), &robot()).unwrap();
        assert_eq!(d.chosen.object_id, "hi");
    }
}
