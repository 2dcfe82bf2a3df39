"""Walkthrough: run the challenge service in-process, solve one challenge
with the stored answer, inspect session statistics."""

from rtcaptcha.attacks import AttackConfig
from rtcaptcha.generate import GenerationConfig
from rtcaptcha.models import build_model
from rtcaptcha.service import CaptchaService, ServiceConfig

config = ServiceConfig(
    attack_cfg=AttackConfig(eps=0.1, iters=4, sigma=1.0, scales=2, seed=1),
    generation=GenerationConfig(mode="pseudo"),
)
service = CaptchaService(config, surrogate=build_model("tiny_lenet", seed=0))

challenge = service.create_challenge(4, session="demo")
print("challenge id:", challenge["id"], "| image:", len(challenge["image_base64"]), "base64 bytes")

answer = service.store._live[challenge["id"]].answer  # demo only: server-side peek
print("verify correct answer ->", service.verify_answer(challenge["id"], answer, 4200.0))
try:
    service.verify_answer(challenge["id"], answer, 1.0)
except Exception as e:
    print("second attempt ->", e)

print("session stats:", service.stats("demo"))
print("\nfor the browser flow: rtcaptcha usability-serve --static frontend/dist")
