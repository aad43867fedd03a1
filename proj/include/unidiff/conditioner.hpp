#pragma once

// Prompt embedding, the learned null condition, and external-condition
// injection via placeholder replacement.
//
// Embedding row i = token_table[ids[i]] + positional[i]. Placeholder
// injection happens after the positional add and replaces the full row.
// The null prompt is the learned <null> embedding broadcast to every
// position with no positional term, and is never attention-masked.

#include <string>
#include <vector>

#include "unidiff/autograd.hpp"
#include "unidiff/core.hpp"
#include "unidiff/params.hpp"
#include "unidiff/vocab.hpp"

namespace unidiff::text {

template <typename T>
struct PromptBuild {
    nn::Var embs = -1;                     // l_max x d_model
    std::vector<uint8_t> key_mask;         // 1 marks a <pad> key
    std::vector<int> placeholder_positions;
};

// embed(tokens): gather + positional, recording pad mask and <p> positions
template <typename T>
PromptBuild<T> embed(nn::Tape<T>& tp, mmdit::ParamCtx<T>& P, const TokenSequence& tokens) {
    const Vocabulary& voc = vocabulary();
    PromptBuild<T> out;
    const nn::Var table = P("tok_emb");
    for (int id : tokens.ids)
        if (id < 0 || id >= tp.rows(table)) throw ConfigError("embed: token id out of range");
    out.embs = tp.add(tp.gather_rows(table, tokens.ids), P("pos_text"));
    out.key_mask.resize(tokens.ids.size());
    for (size_t i = 0; i < tokens.ids.size(); ++i) {
        out.key_mask[i] = tokens.ids[i] == voc.pad_id() ? 1 : 0;
        if (tokens.ids[i] == voc.placeholder_id()) out.placeholder_positions.push_back(static_cast<int>(i));
    }
    return out;
}

// the CFG null condition: one learned row broadcast to all positions
template <typename T>
PromptBuild<T> null_prompt(nn::Tape<T>& tp, mmdit::ParamCtx<T>& P, int l_max) {
    PromptBuild<T> out;
    const nn::Var row = tp.gather_rows(P("tok_emb"), {vocabulary().null_id()});
    out.embs = tp.broadcast_row(row, l_max);
    out.key_mask.assign(static_cast<size_t>(l_max), 0);
    return out;
}

// external encoder H: flatten(crop) -> linear -> gelu -> linear -> n_f x d
template <typename T>
nn::Var encode_identity(nn::Tape<T>& tp, mmdit::ParamCtx<T>& P, const std::vector<T>& crop_flat, int n_f,
                        int d_model) {
    const nn::Var x = tp.constant(crop_flat, 1, static_cast<int>(crop_flat.size()));
    if (tp.cols(x) != tp.rows(P("ext.fc1.w")))
        throw ConfigError("encode_identity: crop size does not match the encoder input");
    const nn::Var h = tp.gelu(tp.linear(x, P("ext.fc1.w"), P("ext.fc1.b")));
    const nn::Var f = tp.linear(h, P("ext.fc2.w"), P("ext.fc2.b"));  // 1 x (n_f * d)
    // reshape to n_f x d
    auto idx = std::make_shared<std::vector<int>>(static_cast<size_t>(n_f) * d_model);
    for (size_t i = 0; i < idx->size(); ++i) (*idx)[i] = static_cast<int>(i);
    return tp.gather_index(f, idx, n_f, d_model);
}

// replace the rows at the recorded placeholder positions with feature rows
template <typename T>
PromptBuild<T> inject_external(nn::Tape<T>& tp, const PromptBuild<T>& prompt, nn::Var feats) {
    if (static_cast<int>(prompt.placeholder_positions.size()) != tp.rows(feats))
        throw ConfigError("inject_external: placeholder/feature count mismatch");
    PromptBuild<T> out = prompt;
    if (prompt.placeholder_positions.empty()) return out;
    out.embs = tp.replace_rows(prompt.embs, feats, prompt.placeholder_positions);
    return out;
}

}  // namespace unidiff::text
