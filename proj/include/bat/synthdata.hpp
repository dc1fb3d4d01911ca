#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bat/box.hpp"
#include "bat/image.hpp"

namespace bat {

// Recipe for one synthetic sequence. The generator is a pure function of this
// struct; re-running it reproduces every byte.
struct SequenceSpec {
  int frames = 40;
  int frame_size = 64;  // square frames
  double min_target = 8.0, max_target = 12.0;
  double motion = 2.5;      // per-frame max displacement, px
  int switch_period = 10;   // dominant modality flips every P frames
  double noise = 0.3;       // degradation on the non-dominant modality, in [0,1]
  std::vector<std::string> attributes;
  std::uint64_t seed = 1;

  void validate() const;  // throws std::invalid_argument
};

struct SequenceRecord {
  std::string name;  // e.g. "seq_0000"; assigned by write/read, may be empty in memory
  std::vector<Image> visible;   // 3-channel, values in [0,1]
  std::vector<Image> infrared;  // 1-channel
  std::vector<BBox> gt_visible, gt_infrared;  // integer-valued, identical for synthetic data
  std::vector<std::string> attributes;
};

// Condition tags a sequence can carry: low/high illumination, appearance
// variation, no occlusion, thermal crossover.
inline const std::vector<std::string> kAttributeVocabulary = {"AIV", "HI", "LI", "NO", "TC"};

// True when frame f renders the target at full contrast in RGB. Blocks of
// switch_period frames alternate, starting with RGB.
bool frame_dominant_is_rgb(int frame, int switch_period);

// A bright elliptical blob over a blocky static texture follows a bounded
// random walk. The dominant modality renders the target at full contrast but
// also a same-shaped decoy blob, slightly hotter, orbiting the target with
// regular close passes; the auxiliary modality renders the target at reduced
// contrast plus seeded noise and no decoy. Each modality alone is therefore
// misleading in its own way (the dominant one ranks the decoy above the
// target, the auxiliary one is faint and noisy), while the two together
// disambiguate. PRNG draws come in a fixed documented order (see the
// implementation) so the output is bit-exact for a given spec.
SequenceRecord generate_sequence(const SequenceSpec& spec);

// One box per line as "x,y,w,h" ASCII integers (values floored). This grammar
// is shared by ground-truth files and tracker result files.
void write_box_lines(const std::string& path, const std::vector<BBox>& boxes);
std::vector<BBox> read_box_lines(const std::string& path);

// root/seq_NNNN/{visible/000000.ppm, infrared/000000.pgm, visible.txt,
// infrared.txt, attributes.txt}. Ground-truth lines are "x,y,w,h" in ASCII
// integers. Records are written in order as seq_0000, seq_0001, ...
void write_dataset(const std::vector<SequenceRecord>& records, const std::string& root);

// Reads every seq_* directory under root, sorted by name.
std::vector<SequenceRecord> read_dataset(const std::string& root);

}  // namespace bat
