use super::SimulatorQuery;

fn answer(response: bool) -> &'static str {
    if response {
        "True"
    } else {
        "False"
    }
}

/// Renders a query as the few-shot text the simulator consumes: each context
/// item on one line, its answer and binned response time on the next, blocks
/// separated by a blank line, and the target item last with no answer.
pub fn render_prompt(query: &SimulatorQuery) -> String {
    let mut out = String::new();
    for entry in &query.context {
        out.push_str(&entry.text);
        out.push('\n');
        out.push_str(answer(entry.response));
        out.push_str(" (Response time: ");
        out.push_str(entry.rt_bin.label());
        out.push_str(")\n\n");
    }
    out.push_str(&query.target_text);
    out
}
