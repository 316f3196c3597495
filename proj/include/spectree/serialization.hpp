#pragma once

// File formats.
//
// Models and trees are JSON documents with nodes, edges, root and (for
// models) family, dimensions and every matrix as {rows, cols, data} with
// data in row-major order. Doubles are written with enough digits to
// round-trip exactly.
//
// Samples use one header line
//   SRGTXT1 <N> <seed> <leaf>:<dim> <leaf>:<dim> ...
// followed by N comma-separated rows of all leaf coordinates in header
// order. The binary variant starts with the same header using the magic
// SRGBIN1 and is followed by N rows of little-endian float64 values.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>

#include "spectree/srg.hpp"
#include "spectree/tree_model.hpp"

namespace spectree {

std::string model_to_json(const LinearTreeModel& model);
// Throws ParseError on malformed documents and the model's own
// validation errors on inconsistent content.
LinearTreeModel model_from_json(std::string_view text);

std::string tree_to_json(const LearnedTree& tree);
// Accepts a tree document or a full model document (parameters ignored).
LearnedTree tree_from_json(std::string_view text);

enum class SampleFormat { text, binary };
SampleFormat sample_format_from_string(const std::string& s);

void write_samples(std::ostream& out, const SampleBatch& batch, SampleFormat format);
// Detects the format from the magic header.
SampleBatch read_samples(std::istream& in);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);
void save_samples(const std::filesystem::path& path, const SampleBatch& batch, SampleFormat format);
SampleBatch load_samples(const std::filesystem::path& path);

}  // namespace spectree
