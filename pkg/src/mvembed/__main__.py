from mvembed.cli import main

main()
