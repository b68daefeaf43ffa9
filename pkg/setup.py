from pathlib import Path

from setuptools import setup

ROOT_PATH = Path(__file__).parents[0]


def read_contents(path: str) -> str:
    full_path: Path = ROOT_PATH / path
    return full_path.read_text(encoding="utf-8")


setup(
    name="cdmp-bag",
    packages=["cdmp_bag"],
    package_data={"cdmp_bag": ["data/*.json"]},
    version="0.1.0",
    license="MIT",
    description="Constrained dynamic movement primitives and marker-based metrics for robotic bag opening",
    entry_points={
        "console_scripts": [
            "cdmp-bag = cdmp_bag.cli:entry",
        ],
    },
    install_requires=[
        "numpy>=1.24",
        "scipy>=1.11",
        "python-dotenv==1.0.0",
        "click==8.1.3",
        "SQLAlchemy==2.0.29",
    ],
    extras_require={
        "test": ["pytest>=7"],
    },
    python_requires=">=3.10",
    keywords=[
        "robotics",
        "dmp",
        "movement-primitives",
        "trajectory-optimization",
        "quadratic-programming",
        "deformable-objects",
        "bag-opening",
    ],
    long_description=read_contents("README.md"),
    long_description_content_type="text/markdown",
    classifiers=[
        "License :: OSI Approved :: MIT License",
        "Intended Audience :: Science/Research",
        "Intended Audience :: Developers",
        "Natural Language :: English",
        "Programming Language :: Python",
        "Topic :: Scientific/Engineering",
        "Programming Language :: Python :: 3 :: Only",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
    ],
)
