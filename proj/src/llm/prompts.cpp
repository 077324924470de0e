#include "statepipe/llm/prompts.hpp"

#include "statepipe/util/csv.hpp"

namespace statepipe::llm {

namespace {

std::string join_lines(std::span<const std::string> lines) {
    std::string out;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (i) out += '\n';
        out += lines[i];
    }
    return out;
}

} // namespace

std::string unknown_state_sentence(const std::string& object) {
    return "The state of " + object + " is unknown.";
}

std::string action_extraction_prompt(std::span<const NarrationSentence> block) {
    std::string narration;
    for (std::size_t i = 0; i < block.size(); ++i) {
        if (i) narration += '\n';
        narration += util::csv_field(block[i].text);
    }
    return "Analyze a segment of video transcript provided in CSV format. The CSV only has one "
           "column and no headers.\n" +
           narration +
           "\n\n"
           "You need to list and describe all object manipulating actions performed in the video "
           "in detail. Do not include actions such as greeting, thanking, explaining or "
           "summarizing that do not manipulate any object. Do not summarize actions too short, but "
           "make sure you describe all the actions in each sentence in detail. Especially, make "
           "sure to use original nouns (object names) and verbs (human actions) when you "
           "summarize.\n\n"
           "In addition, for each action, extract the part of the transcript that describes or "
           "supports the action. Make sure to extract the whole sentence for support.\n"
           "When you need to combine multiple lines from the transcript to support an action, "
           "separate them with a space instead of a comma or line break.\n\n"
           "The answer format should be in CSV format. Make sure to use quotation marks for each "
           "action and the part of the transcript.\n"
           "Format: \"<detailed summary of action>\",\"<part of the transcript (This should be "
           "exactly the same as the original. Don't skip.)>\"\n"
           "Example: \"Adding whisked eggs into the pan.\",\"let's add the whisked eggs into the "
           "pan\"";
}

std::string state_description_prompt(const std::string& object,
                                     const std::string& previous_description,
                                     std::span<const std::string> action_summaries) {
    return "You will be given a sequence of actions.\n"
           "Trace the history of changes in the internal state of " +
           object +
           " and describe it in detail for each action.\n"
           "The initial state of the " +
           object + " is \"" + previous_description +
           "\". You don't need to include the initial state in the answer.\n\n"
           "The answer format should be in CSV with the action column and state description "
           "column.\n"
           "Make sure that each state description includes the whole history of what has been "
           "done on the " +
           object +
           " so far. The description should be a complete sentence starting with \"The " + object +
           "\", but do not finish only with this.\n"
           "If the internal state doesn't change after the action, you don't have to change the "
           "state description from the previous one. Use quotation marks for the description.\n"
           "The answer format:\n"
           "\"action\",\"state\"\n\n"
           "Here is the sequence of actions.\n" +
           join_lines(action_summaries);
}

std::string state_inference_prompt(const std::string& object,
                                   std::span<const std::string> descriptions,
                                   const StateDef& state) {
    const auto& s = state.state_text;
    return "This is a history of state of " + object + ":\n" + join_lines(descriptions) +
           "\n\n"
           "Now, does the state of " +
           object + " fit the definition of \"" + s +
           "\"?\n\n"
           "Object state definition:\n" +
           state.description +
           "\n\n"
           "Think step-by-step as follows:\n"
           "- First, list all points for judging the state \"" +
           s +
           "\" from the object state definition. Make sure to describe in detail.\n"
           "- Second, carefully compare all listed judging points to the whole history of the "
           "object state by tracing it in detail.\n"
           "- Then, answer Yes/No about whether the current state of " +
           object +
           " is consistent with the definition and give detailed reasons. If the history doesn't "
           "contain enough information for judging, answer Ambiguous.\n\n"
           "Make sure to answer the three things above in detail, separating them by newline as "
           "follows:\n"
           "Judging points: [judging points from object state definition]\n\n"
           "Comparison: [comparison]\n\n"
           "Answer: [yes/no/ambiguous and why]";
}

std::string changeit_prompt(const std::string& object, std::span<const std::string> descriptions,
                            const std::vector<std::string>& end_states, const std::string& action) {
    std::string ends;
    for (std::size_t i = 0; i < end_states.size(); ++i) {
        if (i) ends += ", ";
        ends += end_states[i];
    }
    return "This is a history of state of " + object + ":\n" + join_lines(descriptions) +
           "\n\n"
           "You need to infer the state of the " +
           object +
           " based on the history. When you answer, choose from the options below.\n"
           "Options:\n"
           "Initial - The " +
           object + " is just before being " + ends + ", but " + action +
           " has not started.\n"
           "Action - The " +
           object + " is now being " + ends +
           ".\n"
           "End - The " +
           object + " has already been " + ends + ", and " + action +
           " has been completed.\n"
           "Ambiguous - Cannot identify the state from the action information, or the action is "
           "totally unrelated to " +
           action +
           ".\n\n"
           "Think step-by-step as follows:\n"
           "- First, describe the current state of the object in detail based on the history.\n"
           "- Then, answer Initial/Action/End/Ambiguous and reason.\n\n"
           "Current State: [detailed state description]\n\n"
           "Answer: [yes/no/ambiguous and why]";
}

std::string verb_list_prompt(const StateVocabulary& vocab) {
    std::vector<std::string> states;
    for (const auto& s : vocab.states()) states.push_back(s.state_text);
    return "List as many verbs that describe actions associated with each object state. "
           "Associated actions include the actions that are necessary to produce the object "
           "state and actions commonly performed on objects in that state.\n\n" +
           join_lines(states) +
           "\n\n"
           "The answer format should be in comma-delimited CSV format. The verbs should be in "
           "infinitive form and single word.\n"
           "Foramt: \"<object state>(completely the same as given state description)\","
           "\"<verb>,<verb>,...,<verb>\"";
}

} // namespace statepipe::llm
