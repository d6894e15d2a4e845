//! Scripted model for the Blocksworld description. Answers are keyed on the
//! template id and on the sections of the rendered prompt, never on call
//! order, so that the same script drives fresh runs, resumes and reruns.
#![allow(dead_code)]

use nl2plan::llm::{ChatRequest, ScriptedProvider};

pub const TIMESTAMP: &str = "2024-05-01T12:00:00Z";

pub const DOMAIN: &str = "A robot arm moves blocks around on a table. The arm can pick up a clear block \
from the table, put the block it holds down on the table, stack the block it holds onto another clear \
block, and unstack a clear block from the block below it. The arm holds at most one block at a time.";

pub const EASY_TASK: &str = "Block a sits on block b, block b is on the table and block c is on the \
table. The arm is empty. Put block b on top of block a.";

pub const MEDIUM_TASK: &str = "Four blocks form a single tower on the table: a is on the table, b is on \
a, c is on b and d is on top of c. The arm is empty. Reverse the tower so that a is on b, b is on c and \
c is on d.";

pub fn easy_description() -> String {
    format!("{DOMAIN}\n\n{EASY_TASK}")
}

/// Deviations from the well-behaved script.
#[derive(Clone, Debug, Default)]
pub struct Script {
    /// Every draft of this action has an arity error.
    pub stubborn_action: Option<String>,
    /// The first type answer has no fenced block.
    pub unfenced_types: bool,
    /// Every task draft names an object after a type.
    pub stubborn_task: bool,
    /// The action-extraction review rejects nothing.
    pub accept_actions: bool,
}

impl Script {
    pub fn provider(self) -> ScriptedProvider {
        ScriptedProvider::new(move |r| self.respond(r)).with_timestamp(TIMESTAMP)
    }

    pub fn respond(&self, r: &ChatRequest) -> Result<String, String> {
        let prompt = &r.messages.last().ok_or("no messages")?.content;
        let id = r.template_id.as_str();
        let id = id.strip_suffix(":retry").unwrap_or(id);
        Ok(match id {
            "type_extraction" if self.unfenced_types && !r.template_id.ends_with(":retry") => {
                "The only kind of object is a block.\n\nblock: a block".into()
            }
            "type_extraction" => answer(
                "The description talks about blocks; the table and the arm are unique, so they need no type.",
                "types",
                "block: a block that can sit on the table or on another block",
            ),
            "hierarchy_construction" => answer("Blocks are plain objects.", "hierarchy", "block: object"),
            "action_extraction" => answer(
                "The arm picks up, stacks and unstacks blocks.",
                "actions",
                &actions_text(false),
            ),
            "action_extraction:revision" => answer(
                "The review is right, putting a block down was missing.",
                "actions",
                &actions_text(true),
            ),
            "action_extraction_feedback" if !self.accept_actions && !prompt.contains("name: put_down") => answer(
                "Q1: yes, the arm can put a block down on the table.",
                "feedback",
                "1. Add an action put_down: the arm puts the block it holds down on the table.",
            ),
            "type_extraction_feedback"
            | "hierarchy_construction_feedback"
            | "action_extraction_feedback"
            | "action_construction_feedback"
            | "task_extraction_feedback" => answer("Q1: no. Q2: no. Q3: no.", "feedback", "No feedback."),
            "action_construction:pass1" | "action_construction:pass2" => {
                let name = first_word(section(prompt, "Action"));
                self.action(&name, id.ends_with('1'), false)?
            }
            "action_construction:pass1:validation"
            | "action_construction:pass2:validation"
            | "action_construction:pass2:revision" => {
                let name = first_word(section(prompt, "Action"));
                self.action(&name, id.contains("pass1"), true)?
            }
            "task_extraction" => self.task(section(prompt, "Description"), false),
            "task_extraction:validation" | "task_extraction:revision" => {
                self.task(section(prompt, "Description"), !self.stubborn_task)
            }
            "baseline_cot" => "The arm first has to free block b.\n\
                1. unstack a from b\n2. put down a\n3. pick up b\n4. stack b on a"
                .into(),
            other => return Err(format!("no scripted answer for template {other}")),
        })
    }

    fn action(&self, name: &str, first_pass: bool, redraft: bool) -> Result<String, String> {
        let broken = self.stubborn_action.as_deref() == Some(name) || (name == "unstack" && first_pass && !redraft);
        let body = match name {
            "pick_up" if first_pass => "(:action pick_up
  :parameters (?b - block)
  :precondition (and (clear ?b) (on_table ?b) (arm_empty))
  :effect (and (holding ?b) (lifted ?b) (not (clear ?b)) (not (on_table ?b)) (not (arm_empty))))
(:predicates (clear ?b - block) (on_table ?b - block) (arm_empty) (holding ?b - block) (lifted ?b - block))",
            "pick_up" => "(:action pick_up
  :parameters (?b - block)
  :precondition (and (clear ?b) (on_table ?b) (arm_empty))
  :effect (and (holding ?b) (not (clear ?b)) (not (on_table ?b)) (not (arm_empty))))",
            "put_down" => "(:action put_down
  :parameters (?b - block)
  :precondition (holding ?b)
  :effect (and (on_table ?b) (clear ?b) (arm_empty) (not (holding ?b))))",
            "stack" => "(:action stack
  :parameters (?b1 - block ?b2 - block)
  :precondition (and (holding ?b1) (clear ?b2) (not (= ?b1 ?b2)))
  :effect (and (on ?b1 ?b2) (clear ?b1) (arm_empty) (not (holding ?b1)) (not (clear ?b2))))
(:predicates (on ?b1 - block ?b2 - block))",
            "unstack" if broken => "(:action unstack
  :parameters (?b1 - block ?b2 - block)
  :precondition (and (on ?b1) (clear ?b1) (arm_empty))
  :effect (and (holding ?b1) (clear ?b2) (not (on ?b1)) (not (clear ?b1)) (not (arm_empty))))",
            "unstack" => "(:action unstack
  :parameters (?b1 - block ?b2 - block)
  :precondition (and (on ?b1 ?b2) (clear ?b1) (arm_empty))
  :effect (and (holding ?b1) (clear ?b2) (not (on ?b1 ?b2)) (not (clear ?b1)) (not (arm_empty))))",
            other => return Err(format!("no scripted action {other}")),
        };
        let body = if broken && name != "unstack" {
            // the same arity slip, applied to whatever action is stubborn
            body.replacen("(holding ?b1)", "(holding ?b1 ?b2)", 1).replacen("(holding ?b)", "(holding ?b ?b)", 1)
        } else {
            body.to_string()
        };
        let why = if redraft { "Fixing the reported problems." } else { "Checking what must hold before and after." };
        Ok(answer(why, "action", &body))
    }

    fn task(&self, description: &str, fixed: bool) -> String {
        let medium = description.contains("tower");
        // the first draft calls the spare block "block", the name of a type
        let body = match (medium, fixed) {
            (false, false) => "(:objects a b block - block)
(:init (on a b) (on_table b) (on_table block) (clear a) (clear block) (arm_empty))
(:goal (and (on b a) (not (on a b))))",
            (false, true) => "(:objects a b c - block)
(:init (on a b) (on_table b) (on_table c) (clear a) (clear c) (arm_empty))
(:goal (and (on b a) (not (on a b))))",
            (true, _) => "(:objects a b c d - block)
(:init (on_table a) (on b a) (on c b) (on d c) (clear d) (arm_empty))
(:goal (and (on a b) (on b c) (on c d)))",
        };
        answer("Listing the blocks, where they are now and where they should end up.", "task", body)
    }
}

fn actions_text(with_put_down: bool) -> String {
    let mut a = vec![(
        "pick_up",
        "The arm picks up a clear block from the table.",
        "The arm picks up block c from the table.",
    )];
    if with_put_down {
        a.push(("put_down", "The arm puts the block it holds down on the table.", "The arm puts block a down."));
    }
    a.push(("stack", "The arm stacks the block it holds on a clear block.", "The arm stacks block b on block a."));
    a.push((
        "unstack",
        "The arm takes a clear block off the block below it.",
        "The arm takes block a off block b.",
    ));
    a.iter()
        .map(|(n, d, e)| format!("name: {n}\ndescription: {d}\nexample: {e}"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn answer(reasoning: &str, tag: &str, body: &str) -> String {
    format!("{reasoning}\n\n```{tag}\n{body}\n```\n")
}

/// Body of the last `### name` section of a prompt.
fn section<'a>(prompt: &'a str, name: &str) -> &'a str {
    let head = format!("### {name}\n");
    let Some(i) = prompt.rfind(&head) else { return "" };
    let rest = &prompt[i + head.len()..];
    rest.find("\n###").map_or(rest, |j| &rest[..j])
}

fn first_word(s: &str) -> String {
    s.split(|c: char| c == ':' || c.is_whitespace()).next().unwrap_or("").to_string()
}
