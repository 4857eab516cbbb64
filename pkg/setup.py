"""Setup configuration for the MultiAC6 toolkit."""

from setuptools import setup

setup(
    name="multiac6-toolkit",
    version="1.0.0",
    description="Two-agent DDPG shape control of a simulated deformable linear object",
    packages=["src"],
    python_requires=">=3.10",
    install_requires=[
        "numpy>=1.26.4",
        "pandas>=2.1.4",
        "pyarrow>=14.0.2",
        "matplotlib>=3.8.2",
    ],
    entry_points={
        "console_scripts": [
            "multiac6=src.cli:main",
        ],
    },
)
