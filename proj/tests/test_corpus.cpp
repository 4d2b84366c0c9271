#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "ctcasr/corpus.hpp"
#include "ctcasr/features.hpp"
#include "support.hpp"

using namespace ctcasr;

namespace {

Manifest parse(const std::string& text, const std::string& base = "/data") {
  std::istringstream in(text);
  return parse_manifest(in, base, "m");
}

Errc parse_error(const std::string& text) {
  try {
    parse(text);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error";
  return Errc::InvalidArgument;
}

Manifest numbered(int n) {
  Manifest m;
  m.name = "all";
  for (int i = 0; i < n; ++i) {
    Utterance u;
    u.audio_path = "u" + std::to_string(i) + ".wav";
    u.transcript = "w";
    u.gender = i % 3 == 0 ? Gender::male : Gender::female;
    m.utterances.push_back(u);
  }
  return m;
}

}  // namespace

TEST(Manifest, ParsesQuotedFieldsAndResolvesPaths) {
  const Manifest m = parse(
      "audio_path,transcript,speaker_id,gender,corpus_tag\n"
      "a/1.wav,\"ba re, romele\",s1,female,spcs\r\n"
      "\n"
      "/abs/2.wav,\"say \"\"hi\"\"\",s2,male,nchlt\n");
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m.utterances[0].audio_path, std::filesystem::path("/data/a/1.wav"));
  EXPECT_EQ(m.utterances[0].transcript, "ba re, romele");
  EXPECT_EQ(m.utterances[0].gender, Gender::female);
  EXPECT_EQ(m.utterances[1].audio_path, std::filesystem::path("/abs/2.wav"));
  EXPECT_EQ(m.utterances[1].transcript, "say \"hi\"");
  EXPECT_EQ(m.utterances[1].corpus_tag, "nchlt");
  EXPECT_EQ(m.utterances[1].gender, Gender::male);
}

TEST(Manifest, Errors) {
  EXPECT_EQ(parse_error(""), Errc::MissingHeader);
  EXPECT_EQ(parse_error("path,text\na.wav,x\n"), Errc::MissingHeader);
  EXPECT_EQ(parse_error("audio_path,transcript,speaker_id,gender,corpus_tag\na.wav,x,s,male,c\na.wav,y,s,male,c\n"),
            Errc::DuplicatePath);
  EXPECT_EQ(parse_error("audio_path,transcript,speaker_id,gender,corpus_tag\na.wav,  ,s,male,c\n"),
            Errc::EmptyTranscript);
  EXPECT_EQ(parse_error("audio_path,transcript,speaker_id,gender,corpus_tag\na.wav,x,s\n"), Errc::CorruptFile);
}

TEST(Manifest, SaveLoadRoundTrip) {
  testing_support::TempDir dir("man");
  Manifest m = parse(
      "audio_path,transcript,speaker_id,gender,corpus_tag\n"
      "1.wav,\"a, b\",s1,female,x\n"
      "sub/2.wav,c,s2,unknown,y\n",
      dir.path().string());
  save_manifest(m, dir / "manifest.csv");
  const Manifest r = load_manifest(dir / "manifest.csv");
  ASSERT_EQ(r.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(r.utterances[i].audio_path, m.utterances[i].audio_path);
    EXPECT_EQ(r.utterances[i].transcript, m.utterances[i].transcript);
    EXPECT_EQ(r.utterances[i].gender, m.utterances[i].gender);
  }
  EXPECT_NE(testing_support::read_text(dir / "manifest.csv").find("\nsub/2.wav,"), std::string::npos);
}

TEST(Split, DefaultFractionsOnPaperSizedCorpus) {
  const ManifestSplit s = split_manifest(numbered(9183), {}, 7);
  EXPECT_EQ(s.train.size(), 6851u);
  EXPECT_EQ(s.val.size(), 1139u);
  EXPECT_EQ(s.test.size(), 1193u);
}

TEST(Split, PartitionsAndIsDeterministic) {
  const Manifest m = numbered(101);
  const ManifestSplit a = split_manifest(m, {0.6, 0.2, 0.2}, 3);
  const ManifestSplit b = split_manifest(m, {0.6, 0.2, 0.2}, 3);
  const ManifestSplit c = split_manifest(m, {0.6, 0.2, 0.2}, 4);
  std::multiset<std::string> all;
  for (const Manifest* part : {&a.train, &a.val, &a.test})
    for (const auto& u : part->utterances) all.insert(u.audio_path.string());
  EXPECT_EQ(all.size(), 101u);
  EXPECT_EQ(std::set<std::string>(all.begin(), all.end()).size(), 101u);
  auto paths = [](const Manifest& x) {
    std::vector<std::string> out;
    for (const auto& u : x.utterances) out.push_back(u.audio_path.string());
    return out;
  };
  EXPECT_EQ(paths(a.train), paths(b.train));
  EXPECT_EQ(paths(a.test), paths(b.test));
  EXPECT_NE(paths(a.train), paths(c.train));
}

TEST(Split, RejectsBadInput) {
  try {
    split_manifest(numbered(10), {0.5, 0.5, 0.5}, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::BadFractions);
  }
  try {
    split_manifest(numbered(0), {}, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::EmptyManifest);
  }
}

TEST(GroupBy, PartitionsByGender) {
  const auto groups = group_by(numbered(10), GroupKey::gender);
  ASSERT_EQ(groups.size(), 2u);
  EXPECT_EQ(groups.at("male").size(), 4u);
  EXPECT_EQ(groups.at("female").size(), 6u);
}

TEST(Synth, WritesLoadableCorpus) {
  testing_support::TempDir dir("synth");
  SynthSpec spec;
  spec.num_utterances = 12;
  spec.seed = 5;
  const Manifest m = generate_synthetic_corpus(spec, dir.path());
  const Manifest r = load_manifest(dir / "manifest.csv");
  ASSERT_EQ(r.size(), 12u);
  for (std::size_t i = 0; i < r.size(); ++i) {
    const auto& u = r.utterances[i];
    EXPECT_EQ(u.transcript, m.utterances[i].transcript);
    EXPECT_GE(u.transcript.size(), 2u);
    EXPECT_LE(u.transcript.size(), 6u);
    EXPECT_EQ(u.transcript.find_first_not_of("abc"), std::string::npos);
    EXPECT_EQ(u.speaker_id, "spk" + std::to_string(i % 4));
    EXPECT_EQ(u.gender, i % 2 == 0 ? Gender::female : Gender::male);
    EXPECT_EQ(u.corpus_tag, "synth");
    const Waveform w = read_wav(u.audio_path);
    EXPECT_EQ(w.sample_rate, 8000);
    EXPECT_EQ(w.samples.size(), u.transcript.size() * 640);
  }
}

TEST(Synth, SameSeedSameCorpus) {
  testing_support::TempDir a("sa"), b("sb");
  SynthSpec spec;
  spec.num_utterances = 5;
  spec.noise_amplitude = 0.05;
  generate_synthetic_corpus(spec, a.path());
  generate_synthetic_corpus(spec, b.path());
  for (int i = 0; i < 5; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "utt_%05d.wav", i);
    EXPECT_EQ(testing_support::read_text(a / name), testing_support::read_text(b / name));
  }
}

TEST(Synth, ToneFrequencyPerCharacter) {
  SynthSpec spec;
  Rng rng(1);
  FeatureParams p;
  p.sample_rate = 8000;
  p.frame_length = 400;
  p.frame_step = 400;
  p.fft_length = 800;  // 10 Hz bins
  for (int c = 0; c < 3; ++c) {
    std::u32string text(2, static_cast<char32_t>(U'a' + c));
    const FeatureMatrix s = spectrogram(render_tones(text, spec, rng), p);
    int best = 0;
    for (int f = 1; f < s.num_bins; ++f)
      if (s.at(0, f) > s.at(0, best)) best = f;
    EXPECT_EQ(best, static_cast<int>((300 + 350 * c) / 10));
  }
}

TEST(Synth, RepeatedCharactersAreSeparatedBySilence) {
  SynthSpec spec;
  Rng rng(1);
  const Waveform w = render_tones(U"aa", spec, rng);
  const int per = spec.samples_per_char();
  EXPECT_NEAR(w.samples[per - 1], 0.0, 1e-12);
  EXPECT_NEAR(w.samples[per], 0.0, 1e-12);
}

TEST(Synth, SpaceIsSilence) {
  SynthSpec spec;
  Rng rng(1);
  const Waveform w = render_tones(U"a b", spec, rng);
  const int per = spec.samples_per_char();
  for (int i = per; i < 2 * per; ++i) EXPECT_EQ(w.samples[i], 0.0);
}

TEST(Synth, NyquistViolation) {
  SynthSpec spec;
  spec.sample_rate = 2000;
  try {
    spec.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::NyquistViolation);
  }
}
