use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{format_response, LlmError};
use crate::ingest::AnnotatedPost;
use crate::schema::LabelVector;

pub const ZERO_SHOT_TEMPLATE_ID: &str = "zero-shot/v1";
pub const FEW_SHOT_TEMPLATE_ID: &str = "few-shot/v1";
pub const POST_SLOT: &str = "{post}";
pub const CLASS_COUNT: usize = 4;

/// The zero-shot classification prompt; `{post}` marks the post slot.
pub const ZERO_SHOT_TEMPLATE: &str = "\
First, understand the following definitions:
Physical Aspect (PA): Physical wellness fosters healthy dietary practices while discouraging harmful behaviors like tobacco use, drug misuse, and excessive alcohol consumption. Achieving optimal physical wellness involves regular physical activity, sufficient sleep, vitality, enthusiasm, and beneficial eating habits. Body shaming can negatively affect physical well-being by increasing awareness of medical history and appearance issues.
Intellectual Aspect (IA): Utilizing intellectual and cultural activities, both inside and outside the classroom, and leveraging human and learning resources enhance the wellness of an individual by nurturing intellectual growth and stimulation.
Vocational Aspect (VA): The Vocational Dimension acknowledges the role of personal gratification and enrichment derived from one's occupation in shaping life satisfaction. It influences an individual's perspective on creative problem-solving, professional development, and the management of financial obligations.
Social Aspect (SA): The Social Dimension highlights the interplay between society and the natural environment, increasing individuals' awareness of their role in society and their impact on ecosystems. Social bonds enhance interpersonal traits, enabling a better understanding and appreciation of cultural influences.
Spiritual Aspect (SpA): The Spiritual Dimension involves seeking the meaning and purpose of human life, appreciating its vastness and natural forces, and achieving harmony within oneself.
Emotional Aspect (EA): The Emotional Dimension enhances self-awareness and positivity, promoting better emotional control, realistic self-appraisal, independence, and effective stress management.

Now, you will be given a textual post. Classify the post into one of these labels: 1, 2, 3, or 4.
If the post is physical aspect, return 1; if it is either intellectual or vocational aspect, or both of these aspects, return 2;
if the post is social aspect, return 3; and if the post is either spiritual or emotional, or both of these aspect, return 4.
Then JUST list the key parts of the post that primarily influenced your prediction.
Provide your output as a Python list with two values: the first representing your prediction (1, 2, 3, or 4) and
the second representing the most important parts for your prediction like the following.
[value1, value2]

Textual post: {post}";

const DEMO_HEADER: &str = "Here are some examples:\n\n";

/// One demonstration for a few-shot prompt. `class` is 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shot {
    pub post_id: String,
    pub post_text: String,
    pub class: usize,
    pub span_text: Option<String>,
}

/// Whether demonstrations show the explanation part of the answer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShotFormat {
    #[default]
    WithExplanation,
    LabelOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub template_id: String,
    pub rendered_text: String,
    pub shots: Vec<Shot>,
    pub target_post_id: String,
}

fn check_post(post: &str) -> Result<(), LlmError> {
    if post.trim().is_empty() {
        return Err(LlmError::Prompt("post text is empty".into()));
    }
    Ok(())
}

pub fn build_zero_shot_prompt(post_id: &str, post: &str) -> Result<PromptBundle, LlmError> {
    check_post(post)?;
    Ok(PromptBundle {
        template_id: ZERO_SHOT_TEMPLATE_ID.into(),
        rendered_text: ZERO_SHOT_TEMPLATE.replacen(POST_SLOT, post, 1),
        shots: vec![],
        target_post_id: post_id.into(),
    })
}

/// Zero-shot prompt with a block of `Textual post: ... / Output: [...]`
/// pairs placed before the target post, in the order given. With no shots
/// the result is the zero-shot prompt.
pub fn build_few_shot_prompt(
    post_id: &str,
    post: &str,
    shots: &[Shot],
    format: ShotFormat,
) -> Result<PromptBundle, LlmError> {
    if shots.is_empty() {
        return build_zero_shot_prompt(post_id, post);
    }
    check_post(post)?;
    let mut demos = String::from(DEMO_HEADER);
    for shot in shots {
        if shot.class >= CLASS_COUNT {
            return Err(LlmError::Prompt(format!("shot {} has class index {}", shot.post_id, shot.class)));
        }
        let output = match (format, &shot.span_text) {
            (ShotFormat::WithExplanation, Some(span)) => format_response(shot.class + 1, span),
            (ShotFormat::WithExplanation, None) => {
                return Err(LlmError::Prompt(format!("shot {} has no explanation span", shot.post_id)))
            }
            (ShotFormat::LabelOnly, _) => format!("[{}]", shot.class + 1),
        };
        demos.push_str(&format!("Textual post: {}\nOutput: {output}\n\n", shot.post_text));
    }
    let target = format!("Textual post: {POST_SLOT}");
    let template = ZERO_SHOT_TEMPLATE.replacen(&target, &format!("{demos}{target}"), 1);
    Ok(PromptBundle {
        template_id: FEW_SHOT_TEMPLATE_ID.into(),
        rendered_text: template.replacen(POST_SLOT, post, 1),
        shots: shots.to_vec(),
        target_post_id: post_id.into(),
    })
}

/// `n_per_class` distinct posts for each class, drawn with a seeded
/// shuffle. Shots come back grouped by class in ascending order.
pub fn sample_shots(train: &[AnnotatedPost], n_per_class: usize, seed: u64) -> Result<Vec<Shot>, LlmError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shots = Vec::with_capacity(n_per_class * CLASS_COUNT);
    if n_per_class == 0 {
        return Ok(shots);
    }
    for class in 0..CLASS_COUNT {
        let mut pool: Vec<&AnnotatedPost> = train
            .iter()
            .filter(|p| matches!(p.gold, LabelVector::MultiClass { class: c } if c == class))
            .collect();
        if pool.len() < n_per_class {
            return Err(LlmError::Sampling { class: class + 1, available: pool.len(), needed: n_per_class });
        }
        pool.shuffle(&mut rng);
        shots.extend(pool.into_iter().take(n_per_class).map(|p| Shot {
            post_id: p.id.clone(),
            post_text: p.text.clone(),
            class,
            span_text: p.spans.first().map(|s| s.text.clone()),
        }));
    }
    Ok(shots)
}
