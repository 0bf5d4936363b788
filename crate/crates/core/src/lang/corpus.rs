use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Goal, Vocabulary};

/// One templated wording of a goal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Paraphrase {
    pub text: String,
    pub goal: Goal,
    /// Reserved for generalization checks; never used to train the grounding model.
    pub held_out: bool,
}

/// Background sentences giving the game vocabulary some context beyond the templates.
pub const FILLER: &[&str] = &[
    "workers gather minerals near the base",
    "the base trains new workers",
    "a supply depot raises the supply cap",
    "each depot adds eight supply",
    "the barracks trains marines",
    "marines attack the enemy",
    "a marine carries a rifle",
    "the enemy attacks the base",
    "scv units mine mineral fields",
    "minerals are spent on structures",
    "supply limits the army size",
    "barracks require a supply depot",
    "more workers mean more income",
    "the army defends the ramp",
    "marines shoot at zerglings",
    "the scv repairs the bunker",
    "income grows with every worker",
    "the map has mineral patches",
    "marines move across the map",
    "the player expands to a new base",
    "resources pay for units and structures",
    "a worker returns cargo to the base",
    "the commander issues orders",
    "zerglings rush the base",
    "the bunker protects the marines",
    "the refinery extracts vespene gas",
    "scouts search the map for the enemy",
    "the game starts with six workers",
    "infantry fights in the field",
    "the medic heals wounded marines",
];

struct Template {
    goal: Goal,
    verbs: &'static [&'static str],
    dets: &'static [&'static str],
    objects: &'static [&'static str],
}

const BUILD: &[&str] = &["build", "construct", "make", "create"];
const DETS: &[&str] = &["a", "one", "another"];

const TEMPLATES: &[Template] = &[
    Template {
        goal: Goal::Worker,
        verbs: &["build", "construct", "make", "create", "train"],
        dets: DETS,
        objects: &["worker", "scv"],
    },
    Template {
        goal: Goal::Collect,
        verbs: &["collect", "gather", "harvest", "mine"],
        dets: &["", "some", "more"],
        objects: &["resources", "minerals", "crystals"],
    },
    Template {
        goal: Goal::Depot,
        verbs: BUILD,
        dets: DETS,
        objects: &["supply depot", "depot"],
    },
    Template {
        goal: Goal::Barracks,
        verbs: BUILD,
        dets: DETS,
        objects: &["barracks"],
    },
    Template {
        goal: Goal::Marine,
        verbs: &["train", "build", "construct", "make", "create", "produce"],
        dets: DETS,
        objects: &["marine"],
    },
];

/// Every templated wording of every goal, in a fixed order.
///
/// A wording is held out when its verb, determiner and object indices sum to 3 mod 4,
/// so each word still occurs in some training wording. Canonical commands are never held out.
pub fn paraphrases() -> Vec<Paraphrase> {
    let mut out = Vec::new();
    for t in TEMPLATES {
        for (i, verb) in t.verbs.iter().enumerate() {
            for (j, det) in t.dets.iter().enumerate() {
                for (k, obj) in t.objects.iter().enumerate() {
                    let text = [*verb, *det, *obj]
                        .iter()
                        .filter(|w| !w.is_empty())
                        .copied()
                        .collect::<Vec<_>>()
                        .join(" ");
                    let held_out = (i + j + k) % 4 == 3 && text != t.goal.canonical();
                    out.push(Paraphrase {
                        text,
                        goal: t.goal,
                        held_out,
                    });
                }
            }
        }
    }
    out
}

/// Word-vector training corpus: every paraphrase `repeats` times plus the filler, shuffled.
pub fn paraphrase_corpus(repeats: usize, seed: u64) -> Vec<String> {
    let mut corpus: Vec<String> = Vec::new();
    for _ in 0..repeats {
        corpus.extend(paraphrases().into_iter().map(|p| p.text));
        corpus.extend(FILLER.iter().map(|s| s.to_string()));
    }
    corpus.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    corpus
}

/// Vocabulary of the paraphrase corpus; independent of repeat count and shuffle seed.
pub fn corpus_vocabulary() -> Vocabulary {
    Vocabulary::from_corpus(&paraphrase_corpus(1, 0)).expect("corpus has words")
}
