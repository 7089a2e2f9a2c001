import setuptools

with open("README.md", "r") as fh:
    long_description = fh.read()

with open("requirements.txt", "r") as fh:
    requirements = [
        line.strip() for line in fh
        if line.strip() and not line.startswith("#") and not line.startswith("sphinx")
    ]

setuptools.setup(
    name="fogpipe",
    version="0.1.0",
    description="Pipeline-parallel inference scheduling over heterogeneous fog devices",
    long_description=long_description,
    long_description_content_type="text/markdown",
    packages=setuptools.find_packages(exclude=("tests",)),
    package_data={"fogpipe": ["fogpipe.ini", "fixtures/*.json"]},
    install_requires=requirements,
    python_requires=">=3.9",
    entry_points={"console_scripts": ["fogpipe = fogpipe.__main__:main"]},
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
)
