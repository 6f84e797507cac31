#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "reasonact/policy.hpp"

using namespace reasonact;

namespace {

ModelConfig small_cfg() {
    ModelConfig c;
    c.d = 32;
    c.layers = 2;
    c.heads = 2;
    c.context = 96;
    c.img = 16;
    c.patch = 8;  // 4 patches per view
    c.n_act = 4;
    c.instr_len = 8;
    c.reason_len = 8;
    c.max_reason_tokens = 6;
    c.horizon = 4;
    c.d_x = 8;
    c.d_c = 16;
    c.noise_width = 32;
    c.noise_blocks = 2;
    c.film_trunk = 8;
    c.t_train = 50;
    c.sample_steps = 5;
    return c;
}

EmbodimentSpec single_spec(int d_x) {
    EmbodimentSpec s;
    s.id = "single";
    s.d_a = 3;
    s.mins = {-0.05, -0.05, 0.0};
    s.maxs = {0.05, 0.05, 1.0};
    s.mins.resize(static_cast<size_t>(d_x), 0.0);
    s.maxs.resize(static_cast<size_t>(d_x), 0.0);
    return s;
}

EmbodimentSpec bimanual_spec(int d_x) {
    EmbodimentSpec s;
    s.id = "bimanual";
    s.d_a = 6;
    s.mins = {-0.05, -0.05, 0.0, -0.05, -0.05, 0.0};
    s.maxs = {0.05, 0.05, 1.0, 0.05, 0.05, 1.0};
    s.mins.resize(static_cast<size_t>(d_x), 0.0);
    s.maxs.resize(static_cast<size_t>(d_x), 0.0);
    return s;
}

MultiViewObservation rand_obs(int s, uint64_t seed) {
    MultiViewObservation o;
    o.img = s;
    Rng rng(seed);
    for (int k = 0; k < 2; ++k) {
        std::vector<float> v(static_cast<size_t>(3 * s * s));
        for (auto& p : v) p = static_cast<float>(std::round(rng.u01() * 255.0) / 255.0);
        o.views.push_back(std::move(v));
    }
    o.proprio.assign(8, 0.f);
    o.proprio[0] = 0.5f;
    o.proprio[1] = 0.25f;
    o.proprio[2] = 1.0f;
    return o;
}

TrainItem make_item(const ModelConfig& cfg, uint64_t seed) {
    TrainItem it;
    it.obs = rand_obs(cfg.img, seed);
    it.instruction = "sort all items into corresponding areas";
    it.reasoning = "grabbing the red car";
    Rng rng(seed + 1);
    for (int h = 0; h < cfg.horizon; ++h)
        it.chunk.push_back({rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), rng.u01()});
    it.embodiment = "single";
    return it;
}

template <class S>
std::unique_ptr<PolicyModel<S>> make_model(uint64_t seed = 5) {
    auto m = std::make_unique<PolicyModel<S>>(small_cfg(), Vocabulary::default_vocab(), seed);
    m->adapt_embodiment(single_spec(m->cfg().d_x));
    return m;
}

}  // namespace

TEST_CASE("forward_train: loss decomposition is exact and alpha defaults to 10") {
    auto m = make_model<float>();
    CHECK(m->cfg().alpha == 10.0);

    std::vector<TrainItem> batch = {make_item(m->cfg(), 1), make_item(m->cfg(), 2)};
    Rng rng(3);
    auto [losses, total] = m->forward_train(batch, rng);

    CHECK(losses.alpha == 10.f);
    // recomputing the logged total from logged parts reproduces it bit-exactly
    CHECK(losses.total == losses.l_diff + losses.alpha * losses.l_ntp);
    CHECK(losses.total == total.item());
    CHECK(losses.l_diff >= 0.f);
    CHECK(losses.l_ntp >= 0.f);
    CHECK(losses.ntp_positions > 0);

    // l_ntp == 0 implies total == l_diff under the same fused expression
    const float ld = losses.l_diff;
    CHECK(ld + 10.f * 0.f == ld);

    backward(total);
    double gnorm = global_grad_norm(m->params());
    CHECK(gnorm > 0.0);
    m->params().zero_grads();
}

TEST_CASE("forward_train rejects mixed embodiments") {
    auto m = make_model<float>();
    m->adapt_embodiment(bimanual_spec(m->cfg().d_x));
    std::vector<TrainItem> batch = {make_item(m->cfg(), 1), make_item(m->cfg(), 2)};
    batch[1].embodiment = "bimanual";
    Rng rng(3);
    CHECK_THROWS_AS(m->forward_train(batch, rng), ContractError);
}

TEST_CASE("gradients from both objective terms reach shared parameters") {
    auto m = make_model<float>();
    std::vector<TrainItem> batch = {make_item(m->cfg(), 1)};
    Rng rng(4);

    // diffusion-only gradient reaches the backbone through the conditioning
    auto [l1, total1] = m->forward_train(batch, rng);
    backward(total1);
    CHECK(m->backbone().tok_emb().t.has_grad());
    CHECK(m->backbone().blocks()[0].attn.wq.w.t.has_grad());
    m->params().zero_grads();
}

TEST_CASE("act determinism and chunk shape") {
    auto m = make_model<float>();
    auto obs = rand_obs(m->cfg().img, 9);
    auto o1 = m->act(obs, "sort all items into corresponding areas", "single", 1234);
    auto o2 = m->act(obs, "sort all items into corresponding areas", "single", 1234);
    CHECK(o1.chunk == o2.chunk);
    CHECK(o1.reasoning_text == o2.reasoning_text);
    CHECK(o1.reasoning_tokens.ids == o2.reasoning_tokens.ids);
    CHECK(static_cast<int>(o1.chunk.size()) == m->cfg().horizon);
    CHECK(o1.chunk[0].size() == 3u);
    CHECK(o1.reasoning_text == m->vocab().detokenize(o1.reasoning_tokens.ids));

    auto o3 = m->act(obs, "sort all items into corresponding areas", "single", 1235);
    CHECK(o3.chunk != o1.chunk);  // the seed drives the initial noise draw

    CHECK_THROWS_AS(m->act(obs, "sort all items into corresponding areas", "missing", 1), RegistryError);
}

TEST_CASE("finetune mode: freeze contract, zero-init adapters, trainable share") {
    auto m = make_model<float>(11);
    auto obs = rand_obs(m->cfg().img, 21);
    auto before = m->act(obs, "sort all items into corresponding areas", "single", 77);

    m->set_training_mode(TrainMode::Finetune);
    // LoRA B is zero, so the model function is unchanged at switch time
    auto after = m->act(obs, "sort all items into corresponding areas", "single", 77);
    CHECK(before.chunk == after.chunk);
    CHECK(before.reasoning_text == after.reasoning_text);

    // frozen base is bit-identical across optimizer steps
    auto frozen_sum = m->params().checksum_if([](const Parameter<float>& p) { return p.frozen; });
    AdamW<float> opt({.lr = 1e-3});
    Rng rng(5);
    for (int i = 0; i < 5; ++i) {
        std::vector<TrainItem> batch = {make_item(m->cfg(), 100 + static_cast<uint64_t>(i))};
        auto [losses, total] = m->forward_train(batch, rng);
        backward(total);
        opt.step(m->params());
        m->params().zero_grads();
    }
    CHECK(m->params().checksum_if([](const Parameter<float>& p) { return p.frozen; }) == frozen_sum);

    // the adapters did move
    bool lora_moved = false;
    for (Parameter<float>* p : m->params().ordered())
        if (p->name.find(".lora_b") != std::string::npos)
            for (float v : p->t.values())
                if (v != 0.f) lora_moved = true;
    CHECK(lora_moved);
}

TEST_CASE("trainable fraction in finetune mode is below a quarter at defaults") {
    // counted from the default configuration
    ModelConfig cfg;  // defaults
    auto m = std::make_unique<PolicyModel<float>>(cfg, Vocabulary::default_vocab(), 3);
    m->adapt_embodiment(single_spec(cfg.d_x));
    m->set_training_mode(TrainMode::Finetune);
    const double frac =
        static_cast<double>(m->params().trainable_count()) / static_cast<double>(m->params().total_count());
    INFO("trainable fraction " << frac << " (" << m->params().trainable_count() << " of "
                               << m->params().total_count() << ")");
    CHECK(frac < 0.25);
}

TEST_CASE("mode change mid-optimizer-step is a contract error") {
    auto m = make_model<float>();
    std::vector<TrainItem> batch = {make_item(m->cfg(), 1)};
    Rng rng(3);
    auto [losses, total] = m->forward_train(batch, rng);
    backward(total);
    CHECK_THROWS_AS(m->set_training_mode(TrainMode::Finetune), ContractError);
    m->params().zero_grads();
    CHECK_NOTHROW(m->set_training_mode(TrainMode::Finetune));
}

TEST_CASE("adapt_embodiment: isolation and non-interference") {
    auto m = make_model<float>(17);
    auto obs = rand_obs(m->cfg().img, 31);
    auto before = m->act(obs, "sort all items into corresponding areas", "single", 55);
    const uint64_t non_head_before = m->checksum_excluding_heads();
    const auto head_single = m->embodiment("single").head.w.t.values();

    m->adapt_embodiment(bimanual_spec(m->cfg().d_x));
    CHECK(m->checksum_excluding_heads() == non_head_before);
    CHECK(m->embodiment("single").head.w.t.values() == head_single);

    auto after = m->act(obs, "sort all items into corresponding areas", "single", 55);
    CHECK(before.chunk == after.chunk);
    CHECK(before.reasoning_text == after.reasoning_text);

    auto bi = m->act(obs, "clear the table", "bimanual", 55);
    CHECK(bi.chunk[0].size() == 6u);

    CHECK_THROWS_AS(m->adapt_embodiment(bimanual_spec(m->cfg().d_x)), RegistryError);
}

TEST_CASE("FiLM gradient coupling: live vs ablated") {
    // post-init: nudge the film sites so gradient flows through the reasoning path
    auto live = make_model<float>(23);
    Rng wr(1);
    for (Parameter<float>* p : live->params().ordered())
        if (p->name.find("film_site.w") != std::string::npos || p->name.find("w_out.w") != std::string::npos)
            for (auto& v : p->t.values_mut()) v += static_cast<float>(wr.normal() * 0.05);

    std::vector<TrainItem> batch = {make_item(live->cfg(), 41)};
    Rng rng(6);
    auto [l , total] = live->forward_train(batch, rng);
    backward(total);
    double trunk_norm = 0;
    for (Parameter<float>* p : live->params().ordered())
        if (p->name.find("film_trunk") != std::string::npos && p->t.has_grad())
            for (float g : p->t.grad()) trunk_norm += static_cast<double>(g) * g;
    CHECK(trunk_norm > 0.0);

    // ablated arm: FiLM generators own no gradient at all
    ModelConfig acfg = small_cfg();
    acfg.ablate_film = true;
    auto abl = std::make_unique<PolicyModel<float>>(acfg, Vocabulary::default_vocab(), 23);
    abl->adapt_embodiment(single_spec(acfg.d_x));
    // parameter count identical: clamping, not removal
    CHECK(abl->params().total_count() == live->params().total_count());
    Rng rng2(6);
    auto [l2, total2] = abl->forward_train(batch, rng2);
    backward(total2);
    for (Parameter<float>* p : abl->params().ordered())
        if (p->name.find("film_") != std::string::npos) CHECK_FALSE(p->t.has_grad());
}

TEST_CASE("checkpoint round trip preserves act() bit-exactly and re-save is identical") {
    namespace fs = std::filesystem;
    auto m = make_model<float>(29);
    m->set_training_mode(TrainMode::Finetune);
    // move some weights off init so the file carries real content
    Rng wr(2);
    for (Parameter<float>* p : m->params().ordered())
        if (!p->frozen)
            for (auto& v : p->t.values_mut()) v += static_cast<float>(wr.normal() * 0.01);

    auto obs = rand_obs(m->cfg().img, 61);
    auto before = m->act(obs, "sort all items into corresponding areas", "single", 99);

    const std::string path = "ckpt_test.bin";
    KvMap extra{{"train.step", "17"}};
    m->save_checkpoint(path, extra, {{"__opt.note", {1.f, 2.f}}});

    auto loaded = PolicyModel<float>::load_checkpoint(path);
    CHECK(loaded.kv.at("train.step") == "17");
    REQUIRE(loaded.extra_records.count("__opt.note"));
    CHECK(loaded.extra_records.at("__opt.note") == std::vector<float>{1.f, 2.f});

    auto after = loaded.model->act(obs, "sort all items into corresponding areas", "single", 99);
    CHECK(before.chunk == after.chunk);
    CHECK(before.reasoning_text == after.reasoning_text);
    CHECK(before.reasoning_tokens.ids == after.reasoning_tokens.ids);

    // save -> load -> save yields identical bytes
    loaded.model->save_checkpoint("ckpt_test2.bin", extra, {{"__opt.note", {1.f, 2.f}}});
    std::ifstream a(path, std::ios::binary), b("ckpt_test2.bin", std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(sa == sb);

    // corruption is detected
    sa[sa.size() / 2] = static_cast<char>(sa[sa.size() / 2] ^ 0x40);
    std::ofstream bad("ckpt_bad.bin", std::ios::binary);
    bad.write(sa.data(), static_cast<std::streamsize>(sa.size()));
    bad.close();
    CHECK_THROWS_AS(PolicyModel<float>::load_checkpoint("ckpt_bad.bin"), IoError);

    fs::remove(path);
    fs::remove("ckpt_test2.bin");
    fs::remove("ckpt_bad.bin");
}

TEST_CASE("model construction is deterministic in the seed") {
    auto a = make_model<float>(31);
    auto b = make_model<float>(31);
    CHECK(a->params().checksum() == b->params().checksum());
    auto c = make_model<float>(32);
    CHECK(a->params().checksum() != c->params().checksum());
}
